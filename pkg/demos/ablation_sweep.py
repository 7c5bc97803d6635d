"""Alpha/beta sweep at continuum size 5, written out as a CSV and two SVG charts.

Same thing as ``ctp ablate --out ablation``, but step by step.
"""

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from ctp import RouterConfig, evaluate
from ctp.continual import STANDARD_SEEDS, STANDARD_TRAIN, sequential_train, standard_suite
from ctp.router import noise_percentiles
from ctp.svg import write_chart

out = Path("ablation")
out.mkdir(exist_ok=True)
alphas, betas = (0.15, 0.25, 0.35, 0.45), (0.55, 0.65, 0.75, 0.85)

runs = []
for seed in STANDARD_SEEDS:
    train, test = standard_suite(seed)
    cfg = replace(STANDARD_TRAIN, seed=seed)
    runs.append((sequential_train(train, cfg), test))

# %% every cell, averaged over seeds
grid = np.zeros((len(alphas), len(betas)))
with open(out / "grid.csv", "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["alpha", "beta", "lower_percentile", "upper_percentile", "classification_accuracy"])
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            router = RouterConfig(alpha=a, beta=b, continuum_size=5)
            grid[i, j] = np.mean([evaluate(reg, test, router).classification_accuracy
                                  for reg, test in runs])
            w.writerow([a, b, *noise_percentiles(a, b), repr(float(grid[i, j]))])

print("rows alpha, columns beta")
print(np.round(grid, 3))
i, j = np.unravel_index(np.argmax(grid), grid.shape)
print(f"best: alpha={alphas[i]} beta={betas[j]} ({grid[i, j]:.3f})")

# %% marginals as bar charts
write_chart(out / "alpha.svg", "Classification accuracy vs alpha", "alpha", "accuracy",
            [str(a) for a in alphas], [("mean over beta", grid.mean(axis=1).tolist())])
write_chart(out / "beta.svg", "Classification accuracy vs beta", "beta", "accuracy",
            [str(b) for b in betas], [("mean over alpha", grid.mean(axis=0).tolist())])
print("wrote", sorted(p.name for p in out.iterdir()))
