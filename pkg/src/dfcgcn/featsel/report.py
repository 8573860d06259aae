from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError

METHODS = ("ttest_fdr", "rf_top_k", "rfe_svm")


@dataclass
class SelectionReport:
    method: str
    selected: list[int]
    scores: list[float]
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown selection method {self.method!r}")
        self.selected = [int(i) for i in self.selected]
        self.scores = [float(s) for s in self.scores]
        if any(b <= a for a, b in zip(self.selected, self.selected[1:])):
            raise ValidationError("selected indices must be strictly increasing")
        if self.selected and not 0 <= self.selected[0] <= self.selected[-1] < len(self.scores):
            raise ValidationError("selected index outside the input feature range")

    @property
    def selected_names(self) -> list[str]:
        return [self.feature_names[i] for i in self.selected] if self.feature_names else []

    def to_dict(self) -> dict:
        return {"method": self.method, "selected": self.selected,
                "scores": self.scores, "feature_names": list(self.feature_names)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SelectionReport":
        d = json.loads(Path(path).read_text())
        return cls(**d)


def top_k_indices(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores (ties -> lower index), returned sorted."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:k])
