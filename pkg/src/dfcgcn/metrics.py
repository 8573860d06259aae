"""Binary classification metrics with AD as the positive class."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .cohort import AD, encode_labels
from .errors import ValidationError


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _mask(mask, n):
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.size != n:
        raise ValidationError(f"mask length {mask.size} != {n}")
    return mask


def confusion(y_true, y_pred, mask=None) -> Confusion:
    t = encode_labels(y_true)
    p = encode_labels(y_pred)
    if t.size != p.size:
        raise ValidationError("y_true and y_pred differ in length")
    m = _mask(mask, t.size)
    if not m.any():
        raise ValidationError("confusion needs a nonempty mask")
    t, p = t[m] == AD, p[m] == AD
    return Confusion(tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)),
                     fn=int(np.sum(t & ~p)), tn=int(np.sum(~t & ~p)))


def prf(conf: Confusion):
    """``(acc, pre, rec, f1, flags)``; undefined ratios are reported as 0 and flagged."""
    flags = []
    acc = (conf.tp + conf.tn) / conf.total if conf.total else 0.0
    if conf.tp + conf.fp == 0:
        pre = 0.0
        flags.append("precision_undefined")
    else:
        pre = conf.tp / (conf.tp + conf.fp)
    if conf.tp + conf.fn == 0:
        rec = 0.0
        flags.append("recall_undefined")
    else:
        rec = conf.tp / (conf.tp + conf.fn)
    if pre + rec == 0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2 * pre * rec / (pre + rec)
    return acc, pre, rec, f1, flags


def roc_auc_fraction(scores, y_true, mask=None) -> Fraction:
    """Mann-Whitney AUC as an exact fraction: wins + ties/2 over pos*neg pairs."""
    s = np.asarray(scores, dtype=float)
    y = encode_labels(y_true)
    m = _mask(mask, s.size)
    s, y = s[m], y[m]
    pos, neg = s[y == AD], s[y != AD]
    if pos.size == 0 or neg.size == 0:
        raise ValidationError("roc_auc needs at least one positive and one negative")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    not_above = np.searchsorted(neg_sorted, pos, side="right")
    # twice the Mann-Whitney U keeps everything integral
    u2 = int(np.sum(below)) * 2 + int(np.sum(not_above - below))
    return Fraction(u2, 2 * pos.size * neg.size)


def roc_auc(scores, y_true, mask=None) -> float:
    return float(roc_auc_fraction(scores, y_true, mask))


def roc_points(scores, y_true, mask=None) -> np.ndarray:
    """ROC curve vertices ``(fpr, tpr)`` from the highest threshold down."""
    s = np.asarray(scores, dtype=float)
    y = encode_labels(y_true)
    m = _mask(mask, s.size)
    s, y = s[m], y[m] == AD
    P, N = y.sum(), (~y).sum()
    if P == 0 or N == 0:
        raise ValidationError("ROC needs both classes")
    pts = [(0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        sel = s >= thr
        pts.append((float((sel & ~y).sum() / N), float((sel & y).sum() / P)))
    return np.array(pts)


def evaluate(y_true, y_pred, scores, mask=None) -> dict:
    conf = confusion(y_true, y_pred, mask)
    acc, pre, rec, f1, flags = prf(conf)
    try:
        auc = roc_auc(scores, y_true, mask)
    except ValidationError:
        auc = float("nan")
        flags = flags + ["auc_undefined"]
    return {"acc": acc, "pre": pre, "rec": rec, "f1": f1, "auc": auc, "n": conf.total,
            "confusion": asdict(conf), "flags": flags}


def save_metrics(metrics: dict, path) -> None:
    Path(path).write_text(json.dumps(metrics, indent=2, allow_nan=True) + "\n")


def write_roc_csv(points, path) -> None:
    with Path(path).open("w") as fh:
        fh.write("fpr,tpr\n")
        for f, t in points:
            fh.write(f"{f!r},{t!r}\n")


METRICS_SCHEMA = {
    "type": "object",
    "required": ["acc", "pre", "rec", "f1", "auc", "n", "confusion", "flags"],
    "properties": {
        "acc": {"type": "number", "minimum": 0, "maximum": 1},
        "pre": {"type": "number", "minimum": 0, "maximum": 1},
        "rec": {"type": "number", "minimum": 0, "maximum": 1},
        "f1": {"type": "number", "minimum": 0, "maximum": 1},
        "auc": {"type": "number"},
        "n": {"type": "integer", "minimum": 1},
        "confusion": {
            "type": "object",
            "required": ["tp", "fp", "fn", "tn"],
            "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "fn", "tn")},
        },
        "flags": {"type": "array", "items": {"type": "string"}},
    },
}
