import sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

delta_nu = float(sys.argv[1])
window = int(sys.argv[2])
lr = float(sys.argv[3]) if len(sys.argv) > 3 else 2e-3

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=lr,
                     batch_size=64, max_inner_iters=1200,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=delta_nu, max_outer_rounds=40, seed=0)
trainer = tr._Trainer(train, test, cfg, None, None)
print(f"CONFIG delta_nu={delta_nu} window={window} lr={lr}", flush=True)

t0 = time.time()
trainer._ascend_to_convergence()
f, conn, ent = trainer._heldin_penalties()
peak_f = f
print(f"phase1 it={trainer.iteration} f={f:.4f} conn={conn:.6f} ent={ent:.4f} "
      f"t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(40):
    f, conn, ent = trainer._heldin_penalties()
    peak_f = max(peak_f, f)
    print(f"round {r} it={trainer.iteration} lam1={trainer.alm.lambda1:.4f} "
          f"nu1={trainer.alm.nu1:.2f} conn={conn:.3e} f={f:.4f} ent={ent:.4f} "
          f"t={time.time()-t0:.0f}s", flush=True)
    if conn <= 1e-6:
        print("PHASE2 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, 0.0, "connection")
    trainer._ascend_to_convergence()

trainer.alm = trainer.alm.advance("discreteness")
for r in range(40):
    f, conn, ent = trainer._heldin_penalties()
    peak_f = max(peak_f, f)
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.4f} "
          f"nu2={trainer.alm.nu2:.2f} conn={conn:.3e} ent={ent:.3e} f={f:.4f} "
          f"t={time.time()-t0:.0f}s", flush=True)
    if ent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, ent, "discreteness")
    trainer._ascend_to_convergence()

summary = tr.evaluate(trainer.model, test, trainer.topology)
print("EVAL", summary, flush=True)
print(f"peak_f={peak_f:.4f} decline={(peak_f - summary.mean_relaxed_sum_rate) / peak_f:.4f}",
      flush=True)

idx = np.arange(0, 1024, 16)
ratios = []
for i in idx:
    g = test.samples[i].gains
    ex = bl.exhaustive(g, 2, 2, scen.noise_power, require_lower=True)
    runs, comb = gnn.recurrent_assign(trainer.model, g, trainer.topology, 2, 2,
                                      scen.noise_power)
    f_bin = tr.sum_rate(g, tr.binarize(runs), scen.noise_power)
    ratios.append(f_bin / ex.sum_rate)
ratios = np.asarray(ratios)
print(f"bound ratio over {len(idx)} samples: mean={ratios.mean():.4f} "
      f"min={ratios.min():.4f}", flush=True)
print(f"total {time.time()-t0:.0f}s iters {trainer.iteration}", flush=True)
