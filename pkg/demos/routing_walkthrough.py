"""Route one continuum by hand and compare with the library's answer."""

import numpy as np

from ctp import RouterConfig, predict_logits, predict_task, sequential_train
from ctp.continual import standard_suite
from ctp.continual import STANDARD_TRAIN
from ctp.router import confidence_score, noise_percentiles, normalize_logits, thresholds

# %% three tasks, three classes each, one expert per task
train, test = standard_suite(0)
registry = sequential_train(train, STANDARD_TRAIN)
print("experts:", [(e.task_id, e.class_offset, e.num_classes) for e in registry])

# %% five test samples from task 1 form one continuum
X = test[1].inputs[:5]
raw = {e.task_id: predict_logits(e, X) for e in registry}
print("raw logits of expert 1, first sample:", np.round(raw[1][0], 3))

# %% each expert's block is min-max scaled on its own, then everything is pooled
normed = {t: normalize_logits(v) for t, v in raw.items()}
pooled = np.concatenate([v.ravel() for v in normed.values()])

lp, up = noise_percentiles(0.25, 0.75)
lo, hi = thresholds(pooled, lp, up)
print(f"percentile targets {lp} {up} -> noise region [{lo:.3f}, {hi:.3f}]")

# %% the expert that owns the data has the fewest values inside the region
scores = {t: confidence_score(v, lo, hi) for t, v in normed.items()}
for t, s in scores.items():
    print(f"  expert {t}: {s:.3f} of its logits are in the noise region")
print("by hand:", min(scores, key=scores.get))

report = predict_task(registry, X, RouterConfig(alpha=0.25, beta=0.75))
print("library:", report.chosen_task, "(true task 1)")
