import sys, time
import numpy as np

sys.path.insert(0, "/root/pkg/tests")
from cfassign import baselines as bl
from cfassign import gnn, scenario as sc, training as tr
from conftest import make_small_scenario

delta_nu = float(sys.argv[1])
window = int(sys.argv[2])
lr = float(sys.argv[3])
violation_tol = float(sys.argv[4])
tag = sys.argv[5]

scen = make_small_scenario()
train = sc.generate_dataset(scen, 8192, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=lr,
                     batch_size=64, max_inner_iters=2000,
                     convergence_window=window, convergence_tol=1e-4,
                     heldin_size=512, eval_every=10, eval_chunk=256,
                     delta_nu=delta_nu, violation_tol=violation_tol,
                     entropy_tol=1e-3, max_outer_rounds=60, seed=0)
print(f"CONFIG {cfg}", flush=True)

t0 = time.time()
model, metrics = tr.train(train, test, cfg,
                          checkpoint_dir=f"/root/pkg/.tune/ckpt_{tag}")
wall = time.time() - t0
metrics.to_csv(f"/root/pkg/.tune/metrics_{tag}.csv")

phases = {}
for r in metrics.records:
    phases.setdefault(r.phase, []).append(r)
for name, rows in phases.items():
    a, b = rows[0], rows[-1]
    print(f"{name}: iters {a.iteration}..{b.iteration} "
          f"test_f {a.test_f:.4f}->{b.test_f:.4f} "
          f"conn {a.test_conn_pen:.3e}->{b.test_conn_pen:.3e} "
          f"ent {a.test_disc_pen:.3e}->{b.test_disc_pen:.3e} "
          f"lam1 {b.lambda1:.3f} lam2 {b.lambda2:.3f}", flush=True)

summary = tr.evaluate(model, test, gnn.build_graph(scen, "full"))
print("EVAL", summary, flush=True)
peak = max(r.test_f for r in metrics.records)
final = metrics.records[-1].test_f
print(f"peak={peak:.4f} final={final:.4f} decline={(peak-final)/peak:.4f}",
      flush=True)

idx = np.arange(0, 1024, 16)
ratios = []
for i in idx:
    g = test.samples[i].gains
    ex = bl.exhaustive(g, 2, 2, scen.noise_power, require_lower=True)
    runs, comb = gnn.recurrent_assign(model, g, gnn.build_graph(scen, "full"),
                                      2, 2, scen.noise_power)
    f_bin = tr.sum_rate(g, tr.binarize(runs), scen.noise_power)
    ratios.append(f_bin / ex.sum_rate)
ratios = np.asarray(ratios)
print(f"bound ratio over {len(idx)}: mean={ratios.mean():.4f} "
      f"min={ratios.min():.4f}", flush=True)
print(f"wall {wall:.0f}s iters {metrics.records[-1].iteration}", flush=True)
