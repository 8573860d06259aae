"""Two-layer graph convolutional network in plain numpy.

Forward pass with ``A = D^-1/2 (S + I) D^-1/2``::

    H1     = ELU(A @ drop(X) @ W0)
    logits = A @ drop(H1) @ W1
    probs  = softmax(logits)

Loss is the mean cross-entropy over the labelled (masked) nodes plus
``weight_decay / 2 * (|W0|^2 + |W1|^2)``. Gradients are derived by hand and
the optimizer is Adam. Column 1 of ``probs`` is the AD probability.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFinite, ValidationError


@dataclass
class TrainConfig:
    lr: float = 0.06
    dropout: float = 0.5
    weight_decay: float = 0.0005
    epochs: int = 150
    hidden: int = 16
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # "best_val": weights from the epoch with the highest validation accuracy;
    # "last": weights after the final epoch
    selection: str = "best_val"

    def validate(self):
        if self.lr < 0 or self.epochs < 1 or self.hidden < 1:
            raise ValidationError("need lr >= 0, epochs >= 1, hidden >= 1")
        if not 0 <= self.dropout < 1:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.selection not in ("best_val", "last"):
            raise ValidationError("selection must be 'best_val' or 'last'")


@dataclass
class GcnParams:
    W0: np.ndarray
    W1: np.ndarray

    def copy(self) -> "GcnParams":
        return GcnParams(self.W0.copy(), self.W1.copy())

    @property
    def in_dim(self) -> int:
        return self.W0.shape[0]

    def to_dict(self) -> dict:
        return {
            "shapes": {"W0": list(self.W0.shape), "W1": list(self.W1.shape)},
            "W0": self.W0.ravel().tolist(),
            "W1": self.W1.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GcnParams":
        s = d["shapes"]
        return cls(np.array(d["W0"], dtype=float).reshape(s["W0"]),
                   np.array(d["W1"], dtype=float).reshape(s["W1"]))


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


@dataclass
class ForwardCache:
    X: np.ndarray
    A: np.ndarray
    AX: np.ndarray
    Z1: np.ndarray
    H1: np.ndarray
    AH: np.ndarray
    mask0: np.ndarray | None
    mask1: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(in_dim: int, hidden: int = 16, n_classes: int = 2, seed: int = 0) -> GcnParams:
    rng = np.random.default_rng(seed)
    return GcnParams(glorot(rng, in_dim, hidden), glorot(rng, hidden, n_classes))


def normalize_adjacency(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"adjacency must be square, got {S.shape}")
    if not np.array_equal(S, S.T):
        raise ValidationError("adjacency must be symmetric")
    S_hat = S + np.eye(S.shape[0])
    d = 1.0 / np.sqrt(S_hat.sum(axis=1))
    return S_hat * d[:, None] * d[None, :]


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def propagate(A, M) -> np.ndarray:
    """``A @ M`` with each output summed over its terms in sorted order.

    The multiset of products feeding an output entry does not depend on how
    the nodes are numbered, so relabeling the nodes permutes the result
    exactly (BLAS row sums would differ in the last bits).
    """
    P = A[:, :, None] * M[None, :, :]
    P.sort(axis=1)
    return P.sum(axis=1)


def dense(M, W) -> np.ndarray:
    """``M @ W`` computed row by row in a fixed order, independent of row position."""
    return (M[:, :, None] * W[None, :, :]).sum(axis=1)


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(X, A, params: GcnParams, dropout: float = 0.0, training: bool = False,
            rng=None) -> ForwardCache:
    """Run the network; dropout is active only when ``training`` and ``dropout > 0``.

    ``rng`` may be a Generator or an integer seed.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows, adjacency has {A.shape[0]}")
    if X.shape[1] != params.W0.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[1]} features, W0 expects {params.W0.shape[0]}")
    if params.W0.shape[1] != params.W1.shape[0]:
        raise DimensionMismatch("W0 and W1 shapes do not chain")
    use_drop = training and dropout > 0
    if use_drop and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask0 = _dropout_mask(rng, X.shape, dropout) if use_drop else None
    Xd = X * mask0 if use_drop else X
    AX = propagate(A, Xd)
    Z1 = dense(AX, params.W0)
    H1 = elu(Z1)
    mask1 = _dropout_mask(rng, H1.shape, dropout) if use_drop else None
    Hd = H1 * mask1 if use_drop else H1
    AH = propagate(A, Hd)
    logits = dense(AH, params.W1)
    if not np.all(np.isfinite(logits)):
        raise NonFinite("non-finite logits in forward pass")
    return ForwardCache(X, A, AX, Z1, H1, AH, mask0, mask1, logits, softmax(logits))


def _check_mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.size != n:
        raise DimensionMismatch(f"mask length {mask.size} != {n} nodes")
    if not mask.any():
        raise ValidationError("loss mask selects no nodes")
    return mask


def nll_from_logits(logits, labels) -> np.ndarray:
    """Per-node ``-log softmax(logits)[label]``, accurate when a class saturates."""
    z = np.asarray(logits, dtype=float)
    rows = np.arange(z.shape[0])
    top = np.argmax(z, axis=1)
    m = z[rows, top]
    e = np.exp(z - m[:, None])
    e[rows, top] = 0.0
    return (m - z[rows, labels]) + np.log1p(e.sum(axis=1))


def loss(probs, labels, mask, params: GcnParams, weight_decay: float = 0.0,
         logits=None) -> float:
    """Masked mean cross-entropy plus ``weight_decay/2 * (|W0|^2 + |W1|^2)``.

    When ``logits`` are given the cross-entropy is computed from them, which
    keeps precision for nearly one-hot rows.
    """
    labels = np.asarray(labels, dtype=int)
    mask = _check_mask(mask, probs.shape[0])
    if logits is not None:
        ce = float(np.mean(nll_from_logits(logits[mask], labels[mask])))
    else:
        p = probs[mask, labels[mask]]
        ce = -np.mean(np.log(np.maximum(p, np.finfo(float).tiny)))
    reg = 0.5 * weight_decay * (np.sum(params.W0 ** 2) + np.sum(params.W1 ** 2))
    return float(ce + reg)


def backward(cache: ForwardCache, labels, mask, params: GcnParams,
             weight_decay: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of ``loss`` for the pass recorded in ``cache``."""
    if cache.AX.shape[1] != params.W0.shape[0] or cache.AH.shape[1] != params.W1.shape[0]:
        raise DimensionMismatch("cache does not match parameter shapes")
    labels = np.asarray(labels, dtype=int)
    n = cache.probs.shape[0]
    mask = _check_mask(mask, n)
    dlogits = cache.probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits[~mask] = 0.0
    dlogits /= mask.sum()
    dW1 = cache.AH.T @ dlogits + weight_decay * params.W1
    dH = cache.A.T @ (dlogits @ params.W1.T)
    if cache.mask1 is not None:
        dH = dH * cache.mask1
    dZ1 = dH * elu_grad(cache.Z1)
    dW0 = cache.AX.T @ dZ1 + weight_decay * params.W0
    return dW0, dW1


def adam_step(params: GcnParams, grads, state: AdamState, cfg: TrainConfig) -> GcnParams:
    """One bias-corrected Adam update; ``state`` is advanced in place."""
    if not state.m:
        state.m = [np.zeros_like(params.W0), np.zeros_like(params.W1)]
        state.v = [np.zeros_like(params.W0), np.zeros_like(params.W1)]
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new = []
    for k, (w, g) in enumerate(zip((params.W0, params.W1), grads)):
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1 ** state.t)
        v_hat = state.v[k] / (1 - b2 ** state.t)
        new.append(w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
    return GcnParams(*new)


def accuracy(probs, labels, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(predict_labels(probs)[mask] == np.asarray(labels)[mask]))


def predict_labels(probs) -> np.ndarray:
    # argmax keeps the first column on ties: (0.5, 0.5) -> class 0 (NC)
    return np.argmax(probs, axis=1)


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def train(graph, cfg: TrainConfig | None = None, params: GcnParams | None = None):
    """Full-batch transductive training on ``graph`` (a PopulationGraph).

    Returns ``(best_params, history)``, where ``best_params`` are the weights
    after the epoch with the highest validation accuracy (earliest on ties;
    last epoch when there is no validation mask or ``cfg.selection`` is
    "last") and ``history`` holds one
    dict per epoch with the fields in ``HISTORY_FIELDS``.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    A = normalize_adjacency(graph.S)
    X = graph.X.values
    y = graph.labels
    train_mask = graph.masks.train
    val_mask = graph.masks.val
    if not train_mask.any():
        raise ValidationError("train mask is empty")
    has_val = bool(val_mask.any())
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    params = params.copy() if params is not None else init_params(X.shape[1], cfg.hidden,
                                                                   seed=cfg.seed)
    state = AdamState()
    history = []
    best, best_acc = params.copy(), -np.inf
    for epoch in range(1, cfg.epochs + 1):
        try:
            cache = forward(X, A, params, cfg.dropout, training=True, rng=rng)
            tr_loss = loss(cache.probs, y, train_mask, params, cfg.weight_decay, cache.logits)
            grads = backward(cache, y, train_mask, params, cfg.weight_decay)
            params = adam_step(params, grads, state, cfg)
            if not (np.all(np.isfinite(params.W0)) and np.all(np.isfinite(params.W1))):
                raise NonFinite("parameters became non-finite")
            ev = forward(X, A, params)
        except NonFinite as exc:
            raise NonFinite(f"training diverged at epoch {epoch}: {exc}", history) from exc
        row = {
            "epoch": epoch,
            "train_loss": tr_loss,
            "train_acc": accuracy(cache.probs, y, train_mask),
            "val_loss": (loss(ev.probs, y, val_mask, params, cfg.weight_decay, ev.logits)
                         if has_val else float("nan")),
            "val_acc": accuracy(ev.probs, y, val_mask) if has_val else float("nan"),
        }
        history.append(row)
        score = row["val_acc"] if has_val and cfg.selection == "best_val" else epoch
        if score > best_acc:
            best_acc = score
            best = params.copy()
    return best, history


def predict(graph, params: GcnParams):
    """Evaluation-mode labels and class probabilities (column 1 = AD)."""
    cache = forward(graph.X.values, normalize_adjacency(graph.S), params)
    return predict_labels(cache.probs), cache.probs


def save_params(params: GcnParams, path, cfg: TrainConfig | None = None, extra=None) -> None:
    doc = params.to_dict()
    if cfg is not None:
        doc["seed"] = cfg.seed
        doc["config"] = asdict(cfg)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_params(path) -> GcnParams:
    try:
        return GcnParams.from_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise ValidationError(f"cannot read model parameters {path}: {exc}") from exc


def write_history(history, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for row in history:
            fh.write(",".join(str(row["epoch"]) if k == "epoch" else repr(float(row[k]))
                              for k in HISTORY_FIELDS) + "\n")
