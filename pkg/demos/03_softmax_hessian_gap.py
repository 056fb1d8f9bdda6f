"""How well does an optimizer's Fisher estimate match the true Hessian?

For softmax regression the Hessian is available in closed form. We train
the same model with SOAP and with DyKAF on the same minibatches, rebuild the
full curvature matrix each optimizer implicitly uses, and measure its
distance to the exact Hessian at the final weights.
"""
import numpy as np

from dykaf import linalg as la
from dykaf import model as md
from dykaf import optim as op
from dykaf.experiments.hessian_gap import train

ds = md.synth_blobs(num_classes=3, dim=8, count=512, seed=0)
hp = op.Hyperparams(learning_rate=1e-2)
rng = np.random.default_rng(0)
batches = [rng.integers(0, ds.size, 32) for _ in range(500)]

# %% train both optimizers on identical batches
results = {}
for method in ("soap", "dykaf"):
    W, state = train(method, ds, batches, hp)
    H = md.hessian(md.SoftmaxModel(W), ds)
    F = md.fisher_reconstruct(state, hp)
    cos = la.frobenius_inner(H, F) / (la.frobenius_norm(H) * la.frobenius_norm(F))
    results[method] = (md.loss(md.SoftmaxModel(W), ds), md.accuracy(md.SoftmaxModel(W), ds),
                       la.frobenius_norm(H - F) / la.frobenius_norm(H), cos)

# %% both fit the data; DyKAF's curvature estimate points closer to H
print(f"{'method':<8}{'loss':>8}{'acc':>8}{'||H-F||/||H||':>16}{'cos(H,F)':>10}")
for method, (loss, acc, gap, cos) in results.items():
    print(f"{method:<8}{loss:>8.4f}{acc:>8.3f}{gap:>16.4f}{cos:>10.3f}")

# %% the same machinery drives a multi-parameter model
opt = op.MatrixOptimizer("dykaf", hp)
params = {"W": np.zeros((3, 8))}
for idx in batches[:100]:
    g = md.gradient(md.SoftmaxModel(params["W"]), ds.subset(idx))
    params = opt.step(params, {"W": g})
print("\nMatrixOptimizer after 100 steps, loss =", round(md.loss(md.SoftmaxModel(params["W"]), ds), 4))
