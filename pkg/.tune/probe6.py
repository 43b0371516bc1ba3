import dataclasses, sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

lam1 = float(sys.argv[1])
nu1 = float(sys.argv[2])
delta_nu = float(sys.argv[3])

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=2e-3,
                     batch_size=64, max_inner_iters=1200,
                     convergence_window=50, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=delta_nu, max_outer_rounds=40, seed=0)
trainer = tr._Trainer(train, test, cfg, None, None)
print(f"CONFIG lam1={lam1} nu1={nu1} delta_nu={delta_nu}", flush=True)

t0 = time.time()
trainer._ascend_to_convergence()
print(f"phase1 it={trainer.iteration} t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(30):
    f, conn, ent = trainer._heldin_penalties()
    print(f"round {r} it={trainer.iteration} lam1={trainer.alm.lambda1:.3f} "
          f"nu1={trainer.alm.nu1:.1f} conn={conn:.3e} f={f:.4f}", flush=True)
    if conn <= 1e-6:
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, 0.0, "connection")
    trainer._ascend_to_convergence()

# emulate the endpoint of a much longer ramp, then settle under it
trainer.alm = dataclasses.replace(trainer.alm, lambda1=lam1, nu1=nu1)
trainer._ascend_to_convergence()
f, conn, ent = trainer._heldin_penalties()
print(f"boosted settle it={trainer.iteration} conn={conn:.3e} f={f:.4f} "
      f"ent={ent:.4f}", flush=True)

trainer.alm = trainer.alm.advance("discreteness")
for r in range(40):
    f, conn, ent = trainer._heldin_penalties()
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.3f} "
          f"nu2={trainer.alm.nu2:.2f} conn={conn:.3e} ent={ent:.3e} "
          f"f={f:.4f} t={time.time()-t0:.0f}s", flush=True)
    if ent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, ent, "discreteness")
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
