"""Task prediction against continuum size, then CTP next to the usual baselines."""

from dataclasses import replace

import numpy as np

from ctp import RouterConfig, evaluate
from ctp.continual import (STANDARD_SEEDS, STANDARD_TRAIN, ctp_ce_variant, format_table,
                           learning_curve, out_of_task_entropy, run_method, sequential_train,
                           standard_suite)

runs = []
for seed in STANDARD_SEEDS:
    train, test = standard_suite(seed)
    cfg = replace(STANDARD_TRAIN, seed=seed)
    runs.append((train, test, cfg, sequential_train(train, cfg), ctp_ce_variant(train, cfg)))

# %% longer continua give the router more evidence
for m in (1, 2, 5, 15):
    acc = [evaluate(reg, test, RouterConfig(continuum_size=m)).task_prediction_accuracy
           for _, test, _, reg, _ in runs]
    print(f"m={m:2d}  task prediction {np.mean(acc):.3f}")
# with one sample and three classes per expert every expert scores the same,
# so m=1 falls back to the tie-break and lands on 1/3

# %% why DisMax: its experts are unsure about other tasks' data
dm = np.mean([out_of_task_entropy(reg, test) for _, test, _, reg, _ in runs])
ce = np.mean([out_of_task_entropy(ce_reg, test) for _, test, _, _, ce_reg in runs])
print(f"out-of-task entropy  DisMax {dm:.3f}  CE {ce:.3f}")

# %% per-task classification accuracy for the first seed
train, test, cfg, reg, ce_reg = runs[0]
rows = [evaluate(reg, test), evaluate(ce_reg, test, method="ctp_ce"),
        run_method("finetune", train, test, cfg), run_method("joint", train, test, cfg)]
print(format_table(rows))

# %% finetune as tasks arrive: old tasks drop out
for r in learning_curve("finetune", train, test, cfg):
    print(r.tasks_seen, {t: round(a, 2) for t, a in r.per_task_accuracy.items()})
