from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, ValidationError


@dataclass
class FeatureMatrix:
    values: np.ndarray
    feature_names: list[str]
    subject_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.subject_ids), -1)
        if self.values.shape[1] != len(self.feature_names):
            raise DimensionMismatch(
                f"{self.values.shape[1]} columns but {len(self.feature_names)} feature names")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValidationError("feature names must be unique")
        if np.isnan(self.values).any():
            raise ValidationError("feature matrix contains NaN")

    @property
    def shape(self):
        return self.values.shape

    def take(self, columns) -> "FeatureMatrix":
        columns = list(columns)
        return FeatureMatrix(self.values[:, columns], [self.feature_names[c] for c in columns],
                             list(self.subject_ids))


def assemble_features(scalar: FeatureMatrix | None, fc: FeatureMatrix | None,
                      train_mask=None) -> FeatureMatrix:
    """Concatenate scalar then FC columns and standardize on training subjects.

    Mean and standard deviation (ddof=0) come from ``train_mask`` rows only
    (all rows when the mask is None) and are applied to every subject.
    Columns constant on the training rows are centred but not scaled.
    """
    parts = [p for p in (scalar, fc) if p is not None and p.values.shape[1] > 0]
    ids = (scalar or fc).subject_ids if (scalar or fc) is not None else []
    for p in (scalar, fc):
        if p is not None and list(p.subject_ids) != list(ids):
            raise DimensionMismatch("scalar and FC features list subjects in different orders")
    if not parts:
        return FeatureMatrix(np.zeros((len(ids), 0)), [], list(ids))
    values = np.hstack([p.values for p in parts])
    names = [n for p in parts for n in p.feature_names]
    rows = np.ones(len(ids), bool) if train_mask is None else np.asarray(train_mask, bool)
    if rows.size != len(ids) or not rows.any():
        raise DimensionMismatch("training mask length differs from subject count or is empty")
    mu = values[rows].mean(axis=0)
    sd = values[rows].std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return FeatureMatrix((values - mu) / sd, names, list(ids))
