"""Verify backpropagation against central finite differences.

The whole pipeline (backbone -> adaptation -> distance softmax -> loss) is
differentiated by the package's own reverse-mode tape; this script compares
every parameter gradient with a two-sided numerical estimate.

Run: python3 demos/04_gradient_check.py
"""

import time

import numpy as np

from fspc.training import (analytic_gradients, episode_arrays, grad_check,
                           numeric_gradients, tiny_gradcheck_setup)

for kind in ("pointnet", "dgcnn"):
    model, episode, cfg = tiny_gradcheck_setup(kind)
    n_params = sum(p.data.size for p in model.parameters().values())
    t0 = time.time()
    err = grad_check(model, episode, cfg.n_points, step=1e-5)
    print(f"{kind}+cia: {n_params} learnable scalars, "
          f"max relative error {err:.3e} in {time.time() - t0:.1f}s")

# peek at the worst-matched tensor for the graph-based backbone
model, episode, cfg = tiny_gradcheck_setup("dgcnn")
arrays = episode_arrays(episode, cfg.n_points, seed=0)
analytic = analytic_gradients(model, arrays)
numeric = numeric_gradients(model, arrays)
rows = []
for name in analytic:
    denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric[name])), 1e-8)
    rows.append((float((np.abs(analytic[name] - numeric[name]) / denom).max()), name))
print("\nper-tensor agreement (worst first):")
for err, name in sorted(rows, reverse=True)[:5]:
    print(f"  {err:.3e}  {name}")
