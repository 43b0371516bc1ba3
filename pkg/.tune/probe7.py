import dataclasses, sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

dnu1 = float(sys.argv[1])      # phase-2 ramp
rounds2 = int(sys.argv[2])     # phase-2 rounds
dnu2 = float(sys.argv[3])      # phase-3 ramp
window = int(sys.argv[4])

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=2e-3,
                     batch_size=64, max_inner_iters=1500,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=dnu1, max_outer_rounds=rounds2, seed=0)
trainer = tr._Trainer(train, test, cfg, None, None)
print(f"CONFIG dnu1={dnu1} rounds2={rounds2} dnu2={dnu2} window={window}",
      flush=True)

t0 = time.time()
trainer._ascend_to_convergence()
print(f"phase1 it={trainer.iteration} t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(rounds2):
    f, conn, ent = trainer._heldin_penalties()
    if r % 5 == 0 or r == rounds2 - 1:
        print(f"round {r} it={trainer.iteration} "
              f"lam1={trainer.alm.lambda1:.3f} nu1={trainer.alm.nu1:.1f} "
              f"conn={conn:.3e} f={f:.4f}", flush=True)
    if conn <= 1e-6:
        print("PHASE2 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, 0.0, "connection")
    trainer._ascend_to_convergence()

mid = tr.evaluate(trainer.model, test, trainer.topology)
print(f"phase2-end binary: feas={mid.feasible_fraction:.4f} "
      f"f_bin={mid.mean_binary_sum_rate:.4f} dup={mid.duplicate_pick_rate:.3f}",
      flush=True)

trainer.alm = trainer.alm.advance("discreteness")
for r in range(150):
    f, conn, ent = trainer._heldin_penalties()
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.3f} "
          f"nu2={trainer.alm.nu2:.2f} conn={conn:.3e} ent={ent:.3e} "
          f"f={f:.4f} t={time.time()-t0:.0f}s", flush=True)
    if r % 10 == 9:
        s = tr.evaluate(trainer.model, test, trainer.topology)
        print(f"  snapshot: feas={s.feasible_fraction:.4f} "
              f"f_bin={s.mean_binary_sum_rate:.4f} "
              f"dup={s.duplicate_pick_rate:.3f}", flush=True)
    if ent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    # emulate a separate, slower phase-3 ramp
    lam2 = trainer.alm.lambda2 + trainer.alm.nu2 * ent
    nu2 = trainer.alm.nu2 + dnu2
    trainer.alm = dataclasses.replace(trainer.alm, lambda2=lam2, nu2=nu2)
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
