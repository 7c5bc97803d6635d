"""Dense feature extractor, DisMax / linear heads, exact gradients and SGD.

Everything is plain numpy. Arrays are float64 throughout; a batch is a
2-D array with one row per sample, and most functions also accept a single
1-D sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateVectorError, InputShapeError

NORM_EPS = 1e-12
DEFAULT_ARCH = (32, 32, 16)
FORMAT_NAME = "ctp-expert"
FORMAT_VERSION = 1

LOSS_KINDS = ("dismax", "cross_entropy")


@dataclass
class DenseNet:
    """MLP with ReLU on hidden layers and an identity final (feature) layer.

    ``weights[i]`` has shape ``(out, in)`` and ``biases[i]`` shape ``(out,)``.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigError("DenseNet needs one bias per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[0]}"
                )

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "DenseNet":
        """He-normal weights, zero biases. ``sizes`` includes the input width."""
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"invalid layer sizes {sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list:
        return [self.in_dim] + [w.shape[0] for w in self.weights]


@dataclass
class DisMaxHead:
    """Prototype head producing enhanced logits from isometric distances.

    ``distance_scale`` is learned and always used through its absolute value;
    ``entropic_scale`` is a fixed multiplier applied only inside the loss.
    """

    prototypes: np.ndarray
    distance_scale: float = 1.0
    entropic_scale: float = 1.0

    kind = "dismax"

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=float)
        if self.prototypes.ndim != 2 or self.prototypes.shape[0] < 2:
            raise ConfigError("DisMaxHead needs a (N, feature_dim) prototype matrix with N >= 2")
        if not np.all(np.isfinite(self.prototypes)):
            raise DataError("prototypes contain non-finite entries")
        self.distance_scale = float(self.distance_scale)
        self.entropic_scale = float(self.entropic_scale)
        if not self.entropic_scale > 0:
            raise ConfigError("entropic_scale must be positive")

    @classmethod
    def init(cls, num_classes, feature_dim, rng, entropic_scale=1.0):
        p = rng.normal(size=(num_classes, feature_dim))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        return cls(p, 1.0, entropic_scale)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class LinearHead:
    """Affine softmax head for the cross-entropy variant."""

    weight: np.ndarray
    bias: np.ndarray

    kind = "cross_entropy"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigError("LinearHead weight/bias shapes disagree")
        if self.weight.shape[0] < 2:
            raise ConfigError("LinearHead needs at least two classes")

    @classmethod
    def init(cls, num_classes, feature_dim, rng):
        w = rng.normal(0.0, np.sqrt(1.0 / feature_dim), size=(num_classes, feature_dim))
        return cls(w, np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class ExpertModel:
    net: DenseNet
    head: object
    task_id: int = 0
    class_offset: int = 0
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.net.feature_dim != self.head.feature_dim:
            raise ConfigError(
                f"net produces {self.net.feature_dim} features, head expects {self.head.feature_dim}"
            )
        if self.task_id < 0 or self.class_offset < 0:
            raise ConfigError("task_id and class_offset must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def loss_kind(self) -> str:
        return self.head.kind

    @property
    def in_dim(self) -> int:
        return self.net.in_dim


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    loss_kind: str = "dismax"
    entropic_scale: float = 1.0
    arch: tuple = DEFAULT_ARCH

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if int(self.seed) < 0:
            raise ConfigError("seed must be unsigned")
        if not self.entropic_scale > 0:
            raise ConfigError("entropic_scale must be > 0")
        if not self.arch or min(int(a) for a in self.arch) < 1:
            raise ConfigError(f"invalid arch {self.arch}")


# ---------------------------------------------------------------------------
# forward pieces


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise InputShapeError(f"expected input width {net.in_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("input contains non-finite values")
    return X, single


def _forward_cache(net, X):
    cache = []
    a = X
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        cache.append((a, z))
        a = z if i == last else np.maximum(z, 0.0)
    return a, cache


def forward(net: DenseNet, x) -> np.ndarray:
    """Feature vector(s) for ``x`` (one sample or a batch of rows)."""
    X, single = _as_batch(net, x)
    out, _ = _forward_cache(net, X)
    return out[0] if single else out


def _unit_rows(V, what):
    n = np.linalg.norm(V, axis=-1, keepdims=True)
    bad = np.flatnonzero(n.reshape(-1) < NORM_EPS)
    if bad.size:
        raise DegenerateVectorError(f"{what} row {int(bad[0])} has 2-norm below {NORM_EPS:g}")
    return V / n, n


def isometric_distances(head: DisMaxHead, features) -> np.ndarray:
    """|d_s| * ||unit(features) - unit(prototype_j)|| for every class j."""
    f = np.asarray(features, dtype=float)
    F = f[None, :] if f.ndim == 1 else f
    U, _ = _unit_rows(F, "feature")
    Q, _ = _unit_rows(head.prototypes, "prototype")
    D = abs(head.distance_scale) * np.linalg.norm(U[:, None, :] - Q[None, :, :], axis=-1)
    return D[0] if f.ndim == 1 else D


def enhanced_logits(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)):
        raise DataError("distances contain non-finite values")
    return -(D + D.mean(axis=-1, keepdims=True))


def _log_softmax(Z):
    m = Z.max(axis=-1, keepdims=True)
    s = Z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(Z) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(Z, dtype=float)))


def dismax_loss(L, entropic_scale: float, label: int) -> float:
    """-log softmax(E_s * L)[label], evaluated with a max-shifted log-sum-exp."""
    L = np.asarray(L, dtype=float)
    if not 0 <= label < L.shape[-1]:
        raise IndexError(f"label {label} out of range for {L.shape[-1]} classes")
    if not entropic_scale > 0:
        raise ConfigError("entropic_scale must be > 0")
    return float(-_log_softmax(entropic_scale * L)[label])


def head_logits(head, features) -> np.ndarray:
    if head.kind == "dismax":
        return enhanced_logits(isometric_distances(head, features))
    f = np.asarray(features, dtype=float)
    return f @ head.weight.T + head.bias


def _loss_scale(head):
    return head.entropic_scale if head.kind == "dismax" else 1.0


def predict_logits(expert: ExpertModel, x) -> np.ndarray:
    """Raw logits: enhanced logits L for DisMax (no entropic scale), affine outputs for CE."""
    return head_logits(expert.head, forward(expert.net, x))


def predict_proba(expert: ExpertModel, x) -> np.ndarray:
    """The softmax the expert was trained against (E_s applied for DisMax)."""
    return softmax(_loss_scale(expert.head) * predict_logits(expert, x))


def prediction_entropy(expert: ExpertModel, x) -> np.ndarray:
    p = predict_proba(expert, x)
    return -(p * np.log(np.clip(p, 1e-300, None))).sum(axis=-1)


# ---------------------------------------------------------------------------
# gradients


def _check_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise DataError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= n):
        raise DataError(f"labels must lie in [0, {n})")
    return y


def _dismax_head_backward(head, H, y):
    U, hn = _unit_rows(H, "feature")
    Q, pn = _unit_rows(head.prototypes, "prototype")
    E = U[:, None, :] - Q[None, :, :]
    R = np.linalg.norm(E, axis=-1)
    a = abs(head.distance_scale)
    D = a * R
    N = D.shape[1]
    L = -(D + D.mean(axis=1, keepdims=True))
    Z = head.entropic_scale * L
    logp = _log_softmax(Z)
    B = H.shape[0]
    rows = np.arange(B)
    loss = -logp[rows, y].mean()

    G = np.exp(logp)
    G[rows, y] -= 1.0
    G /= B
    dL = head.entropic_scale * G
    dD = -(dL + dL.sum(axis=1, keepdims=True) / N)
    d_scale = float((dD * R).sum()) * float(np.sign(head.distance_scale))
    dR = a * dD
    safe = np.where(R > 0, R, 1.0)
    dE = np.where(R[..., None] > 0, (dR / safe)[..., None] * E, 0.0)
    dU = dE.sum(axis=1)
    dQ = -dE.sum(axis=0)
    dH = (dU - U * (U * dU).sum(axis=1, keepdims=True)) / hn
    dP = (dQ - Q * (Q * dQ).sum(axis=1, keepdims=True)) / pn
    return loss, dH, {"prototypes": dP, "distance_scale": np.array(d_scale)}


def _linear_head_backward(head, H, y):
    Z = H @ head.weight.T + head.bias
    logp = _log_softmax(Z)
    B = H.shape[0]
    rows = np.arange(B)
    loss = -logp[rows, y].mean()
    G = np.exp(logp)
    G[rows, y] -= 1.0
    G /= B
    return loss, G @ head.weight, {"head_weight": G.T @ H, "head_bias": G.sum(axis=0)}


def _net_backward(net, cache, dout):
    grads = {}
    last = len(net.weights) - 1
    g = dout
    for i in range(last, -1, -1):
        a, z = cache[i]
        if i != last:
            g = g * (z > 0)
        grads[f"W{i}"] = g.T @ a
        grads[f"b{i}"] = g.sum(axis=0)
        if i:
            g = g @ net.weights[i]
    return grads


def backward(expert: ExpertModel, X, y):
    """Mean batch loss and its exact gradient for every learnable tensor.

    Returns ``(loss, grads)`` with ``grads`` keyed like :func:`get_params`.
    The entropic scale is a fixed hyperparameter and gets no gradient.
    """
    X, _ = _as_batch(expert.net, X)
    y = _check_labels(y, expert.num_classes)
    if len(y) != len(X):
        raise InputShapeError(f"{len(X)} inputs but {len(y)} labels")
    H, cache = _forward_cache(expert.net, X)
    if expert.head.kind == "dismax":
        loss, dH, head_grads = _dismax_head_backward(expert.head, H, y)
    else:
        loss, dH, head_grads = _linear_head_backward(expert.head, H, y)
    grads = _net_backward(expert.net, cache, dH)
    grads.update(head_grads)
    return float(loss), grads


def batch_loss(expert: ExpertModel, X, y) -> float:
    X, _ = _as_batch(expert.net, X)
    y = _check_labels(y, expert.num_classes)
    z = _loss_scale(expert.head) * head_logits(expert.head, forward(expert.net, X))
    return float(-_log_softmax(z)[np.arange(len(y)), y].mean())


def get_params(expert: ExpertModel) -> dict:
    """Live references to every learnable tensor (``distance_scale`` as a copy)."""
    params = {}
    for i, (w, b) in enumerate(zip(expert.net.weights, expert.net.biases)):
        params[f"W{i}"] = w
        params[f"b{i}"] = b
    head = expert.head
    if head.kind == "dismax":
        params["prototypes"] = head.prototypes
        params["distance_scale"] = np.array(head.distance_scale)
    else:
        params["head_weight"] = head.weight
        params["head_bias"] = head.bias
    return params


def flatten_params(expert: ExpertModel) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in get_params(expert).values()])


def with_flat_params(expert: ExpertModel, theta) -> ExpertModel:
    """Copy of ``expert`` whose learnable tensors are read from the flat vector ``theta``."""
    theta = np.asarray(theta, dtype=float)
    out = copy_expert(expert)
    pos = 0
    for name, p in get_params(out).items():
        n = p.size
        chunk = theta[pos:pos + n].reshape(p.shape)
        pos += n
        if name == "distance_scale":
            out.head.distance_scale = float(chunk)
        else:
            p[...] = chunk
    if pos != theta.size:
        raise InputShapeError(f"expected {pos} parameters, got {theta.size}")
    return out


def flatten_grads(expert: ExpertModel, grads: dict) -> np.ndarray:
    return np.concatenate([np.ravel(grads[name]) for name in get_params(expert)])


def sgd_step(expert: ExpertModel, grads: dict, lr: float) -> None:
    for name, p in get_params(expert).items():
        if name == "distance_scale":
            expert.head.distance_scale = float(expert.head.distance_scale - lr * grads[name])
        else:
            p -= lr * grads[name]


def copy_expert(expert: ExpertModel) -> ExpertModel:
    net = DenseNet([w.copy() for w in expert.net.weights], [b.copy() for b in expert.net.biases])
    h = expert.head
    if h.kind == "dismax":
        head = DisMaxHead(h.prototypes.copy(), h.distance_scale, h.entropic_scale)
    else:
        head = LinearHead(h.weight.copy(), h.bias.copy())
    return ExpertModel(net, head, expert.task_id, expert.class_offset, list(expert.loss_history))


# ---------------------------------------------------------------------------
# training


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def init_expert(in_dim, num_classes, config: TrainConfig, rng, task_id=0, class_offset=0):
    net = DenseNet.init([in_dim, *config.arch], rng)
    if config.loss_kind == "dismax":
        head = DisMaxHead.init(num_classes, net.feature_dim, rng, config.entropic_scale)
    else:
        head = LinearHead.init(num_classes, net.feature_dim, rng)
    return ExpertModel(net, head, task_id, class_offset)


def run_sgd(expert, X, y, config: TrainConfig, rng) -> ExpertModel:
    """Minibatch SGD in place; appends the per-epoch mean loss to ``loss_history``."""
    n = len(X)
    bs = int(config.batch_size)
    for _ in range(int(config.epochs)):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = backward(expert, X[idx], y[idx])
            sgd_step(expert, grads, config.learning_rate)
            total += loss * len(idx)
        if not np.isfinite(total):
            raise DataError("training diverged (non-finite loss); lower the learning rate")
        expert.loss_history.append(total / n)
    return expert


def train_expert(dataset, arch=None, config: TrainConfig | None = None) -> ExpertModel:
    """Train one expert on a single task's data.

    ``arch`` lists hidden and feature widths (input width comes from the data)
    and overrides ``config.arch`` when given.
    """
    config = config or TrainConfig()
    if arch is not None:
        config = replace(config, arch=tuple(int(a) for a in arch))
    X = np.asarray(dataset.inputs, dtype=float)
    y = np.asarray(dataset.labels)
    if X.ndim != 2 or len(X) == 0:
        raise ConfigError("cannot train on an empty dataset")
    y = _check_labels(y, dataset.n_t)
    rng = np.random.default_rng(config.seed)
    expert = init_expert(X.shape[1], dataset.n_t, config, rng, dataset.task_id, dataset.class_offset)
    return run_sgd(expert, X, y, config, rng)


# ---------------------------------------------------------------------------
# serialization
#
# One JSON object per expert. Floats are written with Python's shortest
# round-trip repr, so load(save(m)) is bit-exact. Layout (version 1):
#   {"format": "ctp-expert", "version": 1, "task_id", "class_offset",
#    "layers": [{"weight": [[...]], "bias": [...]}, ...],
#    "head": {"kind": "dismax", "prototypes", "distance_scale", "entropic_scale"}
#          | {"kind": "cross_entropy", "weight", "bias"},
#    "loss_history": [...]}


def expert_to_dict(expert: ExpertModel) -> dict:
    h = expert.head
    if h.kind == "dismax":
        head = {
            "kind": "dismax",
            "prototypes": h.prototypes.tolist(),
            "distance_scale": h.distance_scale,
            "entropic_scale": h.entropic_scale,
        }
    else:
        head = {"kind": "cross_entropy", "weight": h.weight.tolist(), "bias": h.bias.tolist()}
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "task_id": int(expert.task_id),
        "class_offset": int(expert.class_offset),
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(expert.net.weights, expert.net.biases)
        ],
        "head": head,
        "loss_history": [float(v) for v in expert.loss_history],
    }


def expert_from_dict(d: dict) -> ExpertModel:
    if d.get("format") != FORMAT_NAME:
        raise DataError(f"not a {FORMAT_NAME} record")
    if d.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported {FORMAT_NAME} version {d.get('version')!r}")
    try:
        net = DenseNet([l["weight"] for l in d["layers"]], [l["bias"] for l in d["layers"]])
        h = d["head"]
        if h["kind"] == "dismax":
            head = DisMaxHead(h["prototypes"], h["distance_scale"], h["entropic_scale"])
        elif h["kind"] == "cross_entropy":
            head = LinearHead(h["weight"], h["bias"])
        else:
            raise DataError(f"unknown head kind {h['kind']!r}")
        return ExpertModel(net, head, int(d["task_id"]), int(d["class_offset"]),
                           list(d.get("loss_history", [])))
    except KeyError as exc:
        raise DataError(f"expert record missing field {exc}") from None


def save_expert(expert: ExpertModel, path) -> None:
    text = json.dumps(expert_to_dict(expert), allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_expert(path) -> ExpertModel:
    return expert_from_dict(json.loads(Path(path).read_text()))
