import sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

dnu = float(sys.argv[1])       # single ramp for both phases
rounds2 = int(sys.argv[2])     # phase-2 round cap
rounds3 = int(sys.argv[3])     # phase-3 round cap
window = int(sys.argv[4])
vtol = float(sys.argv[5]) if len(sys.argv) > 5 else 1e-6

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=2e-3,
                     batch_size=64, max_inner_iters=1500,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=dnu, max_outer_rounds=rounds2, seed=0)
trainer = tr._Trainer(train, test, cfg, None, None)
gains = test.gains_array()

def test_pen():
    return tr.dataset_penalties(trainer.model, gains, trainer.topology, 2, 2,
                                scen.noise_power, chunk=256)

print(f"CONFIG dnu={dnu} rounds2={rounds2} rounds3={rounds3} "
      f"window={window} vtol={vtol}", flush=True)

t0 = time.time()
trainer._ascend_to_convergence()
print(f"phase1 it={trainer.iteration} t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(rounds2):
    tf, tconn, tent = test_pen()
    hf, hconn, hent = trainer._heldin_penalties()
    if r % 5 == 0 or tconn <= vtol:
        print(f"round {r} it={trainer.iteration} "
              f"lam1={trainer.alm.lambda1:.3f} nu1={trainer.alm.nu1:.1f} "
              f"test_conn={tconn:.3e} heldin_conn={hconn:.3e} f={tf:.4f} "
              f"t={time.time()-t0:.0f}s", flush=True)
    if r % 10 == 0 and r >= 30:
        s = tr.evaluate(trainer.model, test, trainer.topology)
        print(f"  p2 snapshot: feas={s.feasible_fraction:.4f} "
              f"f_bin={s.mean_binary_sum_rate:.4f}", flush=True)
    if tconn <= vtol:
        print("PHASE2 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, hconn, 0.0, "connection")
    trainer._ascend_to_convergence()

mid = tr.evaluate(trainer.model, test, trainer.topology)
print(f"phase2-end binary: feas={mid.feasible_fraction:.4f} "
      f"f_bin={mid.mean_binary_sum_rate:.4f} dup={mid.duplicate_pick_rate:.3f}",
      flush=True)

trainer.alm = trainer.alm.advance("discreteness")
for r in range(rounds3):
    tf, tconn, tent = test_pen()
    hf, hconn, hent = trainer._heldin_penalties()
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.3f} "
          f"nu2={trainer.alm.nu2:.2f} test_conn={tconn:.3e} "
          f"test_ent={tent:.3e} f={tf:.4f} t={time.time()-t0:.0f}s", flush=True)
    if r % 5 == 4:
        s = tr.evaluate(trainer.model, test, trainer.topology)
        print(f"  snapshot: feas={s.feasible_fraction:.4f} "
              f"f_bin={s.mean_binary_sum_rate:.4f} "
              f"dup={s.duplicate_pick_rate:.3f}", flush=True)
    if tent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, hconn, hent, "discreteness")
    trainer._ascend_to_convergence()

summary = tr.evaluate(trainer.model, test, trainer.topology)
print("EVAL", summary, flush=True)

idx = np.arange(0, 1024, 16)
ratios = []
for i in idx:
    g = test.samples[i].gains
    ex = bl.exhaustive(g, 2, 2, scen.noise_power, require_lower=True)
    runs, _ = gnn.recurrent_assign(trainer.model, g, trainer.topology, 2, 2,
                                   scen.noise_power)
    ratios.append(tr.sum_rate(g, tr.binarize(runs), scen.noise_power)
                  / ex.sum_rate)
ratios = np.asarray(ratios)
print(f"bound ratio: mean={ratios.mean():.4f} min={ratios.min():.4f}",
      flush=True)
print(f"total {time.time()-t0:.0f}s iters {trainer.iteration}", flush=True)
