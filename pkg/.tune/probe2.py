import time, numpy as np, sys
sys.path.insert(0, '/root/pkg/tests')
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

scen = make_small_scenario()
train = sc.generate_dataset(scen, 4096, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=2e-3,
                     batch_size=64, max_inner_iters=600,
                     convergence_window=60, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     max_outer_rounds=40, seed=0)
trainer = tr._Trainer(train, test, cfg, None, None)

t0 = time.time()
trainer._ascend_to_convergence()
f, conn, ent = trainer._heldin_penalties()
print(f"phase1 done it={trainer.iteration} f={f:.4f} conn={conn:.6f} ent={ent:.4f} "
      f"t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(40):
    f, conn, ent = trainer._heldin_penalties()
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
    print(f"d-round {r} it={trainer.iteration} lam2={trainer.alm.lambda2:.4f} "
          f"nu2={trainer.alm.nu2:.2f} conn={conn:.3e} ent={ent:.3e} f={f:.4f} "
          f"t={time.time()-t0:.0f}s", flush=True)
    if ent <= 1e-3:
        print("PHASE3 EXIT", flush=True)
        break
    trainer.alm = tr.multiplier_update(trainer.alm, conn, ent, "discreteness")
    trainer._ascend_to_convergence()

topo = trainer.topology
summary = tr.evaluate(trainer.model, test, topo)
print("EVAL", summary, flush=True)
print(f"total {time.time()-t0:.0f}s iters {trainer.iteration}", flush=True)
