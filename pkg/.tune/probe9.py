import sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

dnu = float(sys.argv[1])
rounds2 = int(sys.argv[2])
lr = float(sys.argv[3])
window = int(sys.argv[4])
tag = sys.argv[5]
hidden = int(sys.argv[6]) if len(sys.argv) > 6 else 16
message = int(sys.argv[7]) if len(sys.argv) > 7 else 8

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, hidden, message),
                     learning_rate=lr,
                     batch_size=64, max_inner_iters=1500,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10000, eval_chunk=256,
                     delta_nu=dnu, max_outer_rounds=rounds2, seed=0)
trainer = tr._Trainer(train, test, cfg, checkpoint_dir=f"/root/pkg/.tune/{tag}")
print(f"CONFIG dnu={dnu} rounds2={rounds2} lr={lr} window={window}", flush=True)

t0 = time.time()
trainer._ascend_to_convergence()
print(f"phase1 it={trainer.iteration} t={time.time()-t0:.0f}s", flush=True)

trainer.alm = trainer.alm.advance("connection")
for r in range(rounds2):
    hf, hconn, hent = trainer._heldin_penalties()
    if r % 10 == 0:
        print(f"round {r} it={trainer.iteration} "
              f"lam1={trainer.alm.lambda1:.3f} nu1={trainer.alm.nu1:.1f} "
              f"conn={hconn:.3e} f={hf:.4f} t={time.time()-t0:.0f}s",
              flush=True)
    trainer.alm = tr.multiplier_update(trainer.alm, hconn, 0.0, "connection")
    trainer._ascend_to_convergence()
path = trainer._checkpoint(f"p2end")
print(f"checkpoint {path}", flush=True)

mid = tr.evaluate(trainer.model, test, trainer.topology)
print(f"phase2-end: feas={mid.feasible_fraction:.4f} "
      f"f_bin={mid.mean_binary_sum_rate:.4f}", flush=True)

# dissect the infeasible set: how short, how far from a fixing flip, and
# what the best single flip would cost in binarized rate
margins, deltas, deficits = [], [], []
n_inf = 0
for s in test.samples:
    g = s.gains
    runs, comb = gnn.recurrent_assign(trainer.model, g, trainer.topology,
                                      2, 2, scen.noise_power)
    b = tr.binarize(runs)
    cov = b.sum(axis=1)
    short = np.flatnonzero(cov < 2)
    if short.size == 0:
        continue
    n_inf += 1
    deficits.append(int((2 - cov[short]).sum()))
    base = tr.sum_rate(g, b, scen.noise_power)
    best = None
    for k in short:
        for u, run in enumerate(runs):
            for n in range(g.shape[1]):
                if b[k, n] == 1.0:
                    continue
                win = int(np.argmax(run[:, n]))
                margin = float(run[win, n] - run[k, n])
                fixed = [r.copy() for r in runs]
                col = np.zeros(g.shape[0])
                col[k] = 1.0
                fixed[u][:, n] = col
                b2 = tr.binarize(fixed)
                if b2.sum(axis=1)[k] < cov[k] + 1:
                    continue
                delta = tr.sum_rate(g, b2, scen.noise_power) - base
                if best is None or margin < best[0]:
                    best = (margin, delta)
    if best is not None:
        margins.append(best[0])
        deltas.append(best[1])

margins = np.asarray(margins)
deltas = np.asarray(deltas)
print(f"infeasible {n_inf}/1024  total deficit {sum(deficits)}", flush=True)
if n_inf:
    print(f"deficit histogram {np.bincount(deficits)}", flush=True)
    print(f"min-margin fix: median {np.median(margins):.4f} "
          f"q90 {np.quantile(margins, 0.9):.4f} max {margins.max():.4f}",
          flush=True)
    print(f"fix rate delta: median {np.median(deltas):+.4f} "
          f"frac positive {(deltas > 0).mean():.3f} "
          f"worst {deltas.min():+.4f}", flush=True)
print(f"total {time.time()-t0:.0f}s", flush=True)
