"""Following a moving Fisher matrix with two small factors.

Random Gaussian gradients arrive one at a time and the empirical Fisher is
kept as an exponential moving average. The projector-splitting update keeps
a Kronecker pair close to the best possible one without ever forming the
big matrix; Shampoo's factors, by contrast, approximate an upper bound and
sit far away in absolute terms.
"""
import numpy as np

from dykaf.experiments import ExperimentConfig, run

cfg = ExperimentConfig(experiment="fisher-sim", m=12, n=12, steps=60, seed=0)
records = run(cfg)
err = {(r.method, r.x): r.value for r in records if r.metric == "error"}
scaled = {(r.method, r.x): r.value for r in records if r.metric == "scaled_error"}

# %% absolute error ||F - L kron R|| at a few steps
methods = ("nkp_best", "dykaf", "shampoo", "shampoo_raw")
print(f"{'step':>5}" + "".join(f"{m:>14}" for m in methods))
for t in (1, 2, 5, 10, 20, 40, 60):
    print(f"{t:>5}" + "".join(f"{err[(m, t)]:>14.3f}" for m in methods))

# %% DyKAF never strays far from the optimum
ratio = [err[("dykaf", t)] / err[("nkp_best", t)] for t in range(1, 61)]
print("\nworst DyKAF / best ratio:", round(max(ratio), 5), "at step", int(np.argmax(ratio)) + 1)

# %% after the best rescaling, the Shampoo estimates are much closer
print("\nbest-scale error at step 60:")
for m in methods:
    print(f"  {m:<12} {scaled[(m, 60)]:.3f}")
