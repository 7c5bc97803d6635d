"""Task-by-task protocol, evaluation, and the finetune / joint / CE comparators."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, check_tasks, generate
from .errors import ConfigError, DataError
from .nn import (
    DisMaxHead,
    ExpertModel,
    LinearHead,
    TrainConfig,
    derive_seed,
    init_expert,
    predict_logits,
    prediction_entropy,
    run_sgd,
    train_expert,
)
from .router import RouterConfig, classify

# Desk-scale protocol used by the acceptance suite, demos and CLI defaults.
STANDARD_SPEC = SyntheticSpec(num_tasks=3, classes_per_task=3, input_dim=8,
                              cluster_separation=10.0, train_per_class=200, test_per_class=100)
STANDARD_TRAIN = TrainConfig(epochs=64, learning_rate=1e-2, batch_size=32,
                             loss_kind="dismax", entropic_scale=1.0)
STANDARD_SEEDS = (0, 1, 2)
# finetune and joint are conventional networks; DisMax belongs to CTP only
BASELINE_LOSS = "cross_entropy"

RESULT_COLUMNS = ["run_id", "method", "seed", "m", "alpha", "beta", "tasks_seen",
                  "task_prediction_accuracy", "classification_accuracy"]


@dataclass
class EvalResult:
    method: str
    task_prediction_accuracy: float
    classification_accuracy: float
    per_task_accuracy: dict
    tasks_seen: int
    continuum_size: int
    alpha: float | None = None
    beta: float | None = None
    per_task_task_accuracy: dict = field(default_factory=dict)
    reports: list = field(default_factory=list, repr=False)

    @property
    def average_accuracy(self) -> float:
        """Unweighted mean over tasks, the 'Average' column of a per-task table."""
        return float(np.mean([self.per_task_accuracy[t] for t in sorted(self.per_task_accuracy)]))


def task_seed(seed: int, task_id: int) -> int:
    return derive_seed(seed, task_id)


def sequential_train(tasks, config: TrainConfig | None = None) -> list:
    """One independent expert per task, each seeing only its own data.

    Expert ``t`` is trained with seed ``derive_seed(config.seed, t)`` so the
    result does not depend on the order tasks arrive in.
    """
    config = config or TrainConfig()
    seen = set()
    for ds in tasks:
        if ds.task_id in seen:
            raise ConfigError(f"duplicate task id {ds.task_id}")
        seen.add(ds.task_id)
    registry = [train_expert(ds, config=replace(config, seed=task_seed(config.seed, ds.task_id)))
                for ds in tasks]
    return sorted(registry, key=lambda e: e.task_id)


def ctp_ce_variant(tasks, config: TrainConfig | None = None) -> list:
    """Same protocol with linear softmax cross-entropy heads."""
    return sequential_train(tasks, replace(config or TrainConfig(), loss_kind="cross_entropy"))


def continua(n: int, m: int):
    """Disjoint consecutive ``(start, stop)`` blocks of size ``m``; the last may be short."""
    if m < 1:
        raise ConfigError("continuum size must be >= 1")
    return [(s, min(s + m, n)) for s in range(0, n, m)]


def _check_eval_inputs(registry, tasks):
    if not tasks or any(len(ds) == 0 for ds in tasks):
        raise DataError("every test set must be non-empty")
    dims = {e.in_dim for e in registry} | {ds.input_dim for ds in tasks}
    if len(dims) != 1:
        raise DataError(f"registry and test data disagree on input width: {sorted(dims)}")


def evaluate(registry, tasks, config: RouterConfig | None = None, method="ctp",
             keep_reports=False) -> EvalResult:
    """Route every continuum of every test task and score the outcome.

    Task-prediction accuracy is over continua; classification accuracy is
    over individual samples and requires the exact global class id.
    """
    config = config or RouterConfig()
    _check_eval_inputs(registry, tasks)
    m = int(config.continuum_size)
    routed = correct_routes = 0
    right = total = 0
    per_task, per_task_route, reports = {}, {}, []
    cid = 0
    for ds in tasks:
        ok_t = routes_t = 0
        hits = 0
        for start, stop in continua(len(ds), m):
            chosen, preds, report = classify(registry, ds.inputs[start:stop], config)
            routes_t += 1
            ok_t += chosen == ds.task_id
            hits += int(np.count_nonzero(preds == ds.global_labels[start:stop]))
            if keep_reports:
                reports.append((cid, report, ds.task_id))
            cid += 1
        per_task[ds.task_id] = hits / len(ds)
        per_task_route[ds.task_id] = ok_t / routes_t
        routed += routes_t
        correct_routes += ok_t
        right += hits
        total += len(ds)
    return EvalResult(method, correct_routes / routed, right / total, per_task,
                      len(registry), m, config.alpha, config.beta, per_task_route, reports)


# ---------------------------------------------------------------------------
# single-model comparators


def _expand_head(head, n_new, rng):
    if head.kind == "dismax":
        fresh = DisMaxHead.init(n_new, head.feature_dim, rng, head.entropic_scale)
        return DisMaxHead(np.vstack([head.prototypes, fresh.prototypes]),
                          head.distance_scale, head.entropic_scale)
    fresh = LinearHead.init(n_new, head.feature_dim, rng)
    return LinearHead(np.vstack([head.weight, fresh.weight]),
                      np.concatenate([head.bias, fresh.bias]))


def _evaluate_single(model, tasks, method) -> EvalResult:
    """Argmax over every class the model knows; the task follows from the class."""
    _check_eval_inputs([model], tasks)
    bounds = np.cumsum([0] + [ds.n_t for ds in tasks])
    per_task, per_task_route = {}, {}
    right = routed_ok = total = 0
    for ds in tasks:
        pred = np.argmax(predict_logits(model, ds.inputs), axis=1)
        pred_task = np.searchsorted(bounds, pred, side="right") - 1
        hits = int(np.count_nonzero(pred == ds.global_labels))
        ok = int(np.count_nonzero(pred_task == ds.task_id))
        per_task[ds.task_id] = hits / len(ds)
        per_task_route[ds.task_id] = ok / len(ds)
        right += hits
        routed_ok += ok
        total += len(ds)
    return EvalResult(method, routed_ok / total, right / total, per_task, len(tasks), 1,
                      per_task_task_accuracy=per_task_route)


def _global(ds):
    return ds.inputs, ds.global_labels


def finetune_model(tasks, config: TrainConfig | None = None) -> ExpertModel:
    """A single network trained on each task in turn, no forgetting mitigation.

    Each new task appends a freshly initialised head block for its classes;
    old blocks are kept. Training on task ``t`` uses a softmax over every
    class seen so far but only task ``t``'s samples.
    """
    config = config or TrainConfig()
    check_tasks(tasks)
    rng = np.random.default_rng(task_seed(config.seed, 0))
    model = None
    for ds in tasks:
        if model is None:
            model = init_expert(ds.input_dim, ds.n_t, config, rng)
        else:
            model.head = _expand_head(model.head, ds.n_t, rng)
        run_sgd(model, *_global(ds), config, rng)
    return model


def joint_model(tasks, config: TrainConfig | None = None) -> ExpertModel:
    """Upper bound: one network trained on the union of all tasks."""
    config = config or TrainConfig()
    check_tasks(tasks)
    X = np.concatenate([ds.inputs for ds in tasks])
    y = np.concatenate([ds.global_labels for ds in tasks])
    rng = np.random.default_rng(task_seed(config.seed, 0))
    model = init_expert(X.shape[1], sum(ds.n_t for ds in tasks), config, rng)
    return run_sgd(model, X, y, config, rng)


def finetune_baseline(train_tasks, test_tasks, config: TrainConfig | None = None) -> EvalResult:
    return _evaluate_single(finetune_model(train_tasks, config), test_tasks, "finetune")


def joint_baseline(train_tasks, test_tasks, config: TrainConfig | None = None) -> EvalResult:
    return _evaluate_single(joint_model(train_tasks, config), test_tasks, "joint")


def out_of_task_entropy(registry, test_tasks) -> float:
    """Mean prediction entropy of each expert on the other tasks' test inputs."""
    vals = [prediction_entropy(e, ds.inputs).mean()
            for e in registry for ds in test_tasks if ds.task_id != e.task_id]
    if not vals:
        raise DataError("need at least two tasks to measure out-of-task entropy")
    return float(np.mean(vals))


METHODS = ("ctp", "ctp_ce", "finetune", "joint")


def run_method(method, train_tasks, test_tasks, train_config, router_config=None,
               registry=None) -> EvalResult:
    """Train (unless ``registry`` is given) and evaluate one method.

    ``finetune`` and ``joint`` always use :data:`BASELINE_LOSS`.
    """
    if method == "ctp":
        registry = registry or sequential_train(train_tasks, train_config)
        return evaluate(registry, test_tasks, router_config, "ctp")
    if method == "ctp_ce":
        registry = registry or ctp_ce_variant(train_tasks, train_config)
        return evaluate(registry, test_tasks, router_config, "ctp_ce")
    baseline_config = replace(train_config, loss_kind=BASELINE_LOSS)
    if method == "finetune":
        return finetune_baseline(train_tasks, test_tasks, baseline_config)
    if method == "joint":
        return joint_baseline(train_tasks, test_tasks, baseline_config)
    raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")


def learning_curve(method, train_tasks, test_tasks, train_config, router_config=None) -> list:
    """Results after 1, 2, ..., T tasks, each evaluated on the tasks seen so far."""
    return [run_method(method, train_tasks[:k], test_tasks[:k], train_config, router_config)
            for k in range(1, len(train_tasks) + 1)]


def mean_results(results) -> dict:
    """Seed-averaged headline metrics of a list of EvalResults."""
    return {
        "task_prediction_accuracy": float(np.mean([r.task_prediction_accuracy for r in results])),
        "classification_accuracy": float(np.mean([r.classification_accuracy for r in results])),
    }


def standard_suite(seed: int, spec: SyntheticSpec = STANDARD_SPEC):
    return generate(replace(spec, seed=seed))


# ---------------------------------------------------------------------------
# results CSV


def result_columns(num_tasks: int) -> list:
    return RESULT_COLUMNS + [f"task{t}_accuracy" for t in range(num_tasks)]


def run_id(*parts) -> str:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()
    return h[:12]


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def result_row(result: EvalResult, seed, rid=None) -> list:
    rid = rid or run_id(result.method, seed, result.continuum_size, result.alpha, result.beta,
                        result.tasks_seen)
    return [rid, result.method, seed, result.continuum_size, _fmt(result.alpha),
            _fmt(result.beta), result.tasks_seen, _fmt(result.task_prediction_accuracy),
            _fmt(result.classification_accuracy),
            *(_fmt(result.per_task_accuracy[t]) for t in sorted(result.per_task_accuracy))]


def write_results(path, rows, header) -> None:
    """Upsert rows into a results CSV keyed by ``run_id``.

    Existing rows with other run ids are kept; rows are written sorted by
    run id so identical inputs always give identical bytes.
    """
    path = Path(path)
    existing = {}
    if path.exists():
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            old_header = next(reader, None)
            if old_header is not None and old_header != header:
                raise DataError(f"{path} has a different column layout; write to a new file")
            for r in reader:
                existing[r[0]] = r
    for r in rows:
        existing[str(r[0])] = [str(v) for v in r]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for key in sorted(existing):
            w.writerow(existing[key])


def format_table(results) -> str:
    """Per-task classification accuracy (percent) with an Average column."""
    if not results:
        return ""
    tasks = sorted(results[0].per_task_accuracy)
    head = ["Method"] + [f"Task {t + 1}" for t in tasks] + ["Average"]
    lines = [" | ".join(f"{h:>9}" for h in head)]
    for r in results:
        cells = [f"{100 * r.per_task_accuracy[t]:9.2f}" for t in tasks]
        lines.append(" | ".join([f"{r.method:>9}", *cells, f"{100 * r.average_accuracy:9.2f}"]))
    return "\n".join(lines)
