import dataclasses, sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

ckpt = sys.argv[1]
dnu = float(sys.argv[2])
rounds3 = int(sys.argv[3])
window = int(sys.argv[4])
lr = float(sys.argv[5])

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=lr,
                     batch_size=64, max_inner_iters=1500,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=dnu, max_outer_rounds=rounds3, seed=0)
tr._PHASE_AFTER_CHECKPOINT.setdefault("p2end", "discreteness")
trainer = tr._Trainer(train, test, cfg, None, resume=ckpt)
trainer.alm = dataclasses.replace(trainer.alm, delta_nu=dnu)
gains = test.gains_array()
print(f"CONFIG ckpt={ckpt} dnu={dnu} rounds3={rounds3} window={window} "
      f"lr={lr}", flush=True)
print(f"resume alm={trainer.alm} it={trainer.iteration}", flush=True)

t0 = time.time()
trainer.alm = trainer.alm.advance("discreteness")
for r in range(rounds3):
    tf, tconn, tent = tr.dataset_penalties(trainer.model, gains,
                                           trainer.topology, 2, 2,
                                           scen.noise_power, chunk=256)
    hf, hconn, hent = trainer._heldin_penalties()
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.3f} "
          f"nu2={trainer.alm.nu2:.2f} test_conn={tconn:.3e} "
          f"test_ent={tent:.3e} f={tf:.4f} t={time.time()-t0:.0f}s", flush=True)
    if r % 2 == 1:
        s = tr.evaluate(trainer.model, test, trainer.topology)
        print(f"  snapshot: feas={s.feasible_fraction:.4f} "
              f"f_bin={s.mean_binary_sum_rate:.4f}", flush=True)
    if tent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, hconn, hent,
                                       "discreteness")
    trainer._ascend_to_convergence()

summary = tr.evaluate(trainer.model, test, trainer.topology)
print("EVAL", summary, flush=True)
bound = np.mean([bl.exhaustive(test.samples[i].gains, 2, 2, scen.noise_power
                               ).sum_rate for i in range(1024)])
print(f"bound ratio of means: {summary.mean_binary_sum_rate / bound:.4f} "
      f"(bound {bound:.4f})", flush=True)
print(f"total {time.time()-t0:.0f}s iters {trainer.iteration}", flush=True)
