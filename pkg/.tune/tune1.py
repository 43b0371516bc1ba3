import time, numpy as np, sys
sys.path.insert(0, '/root/pkg/tests')
from cfassign import gnn, scenario as sc, training as tr, baselines as bl
from conftest import make_small_scenario

scen = make_small_scenario()
train = sc.generate_dataset(scen, 4096, seed=0, split_tag="train")
test = sc.generate_dataset(scen, 1024, seed=1, split_tag="test")
cfg = tr.TrainConfig(model=gnn.ModelConfig(2, 16, 8), learning_rate=2e-3,
                     batch_size=64, max_inner_iters=1500,
                     convergence_window=150, convergence_tol=1e-4,
                     heldin_size=512, eval_every=1, eval_chunk=256,
                     max_outer_rounds=20, seed=0)
t0 = time.time()
model, metrics = tr.train(train, test, cfg, checkpoint_dir="/root/pkg/.tune/run1")
dt = time.time() - t0
print(f"TRAIN DONE in {dt/60:.1f} min, {len(metrics)} iterations", flush=True)
metrics.to_csv("/root/pkg/.tune/run1/metrics.csv")

topo = gnn.build_graph(scen, "full")
summary = tr.evaluate(model, test, topo)
print("EVAL", summary, flush=True)

# exhaustive bound on a 256-sample slice for quick ratio estimate
gains = test.gains_array()
rates = [bl.exhaustive(gains[i], 2, 2, 1.0).sum_rate for i in range(256)]
sub = tr.evaluate(model, sc.Dataset(scenario=scen, samples=test.samples[:256],
                                    seed=test.seed, split_tag="test",
                                    clamp_count=test.clamp_count), topo)
print(f"bound256 {np.mean(rates):.4f} gnn256 {sub.mean_binary_sum_rate:.4f} "
      f"ratio {sub.mean_binary_sum_rate/np.mean(rates):.4f}", flush=True)
