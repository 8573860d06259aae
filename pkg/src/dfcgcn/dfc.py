"""Sliding-window dynamic functional connectivity.

The chain per subject is: enumerate windows, Pearson correlation inside each
window (diagonal zeroed), Fisher z, absolute-value thresholding, accumulation
of the thresholded matrices over windows, and binarization of the
accumulated matrix. The upper triangle of the accumulated matrix is the
subject's FC feature vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import periodogram
from scipy.stats import norm

from .cohort import RoiTimeSeries
from .errors import ValidationError

Z_CLIP = 1.0 - 1e-7


def null_calibrated_tau(L: int, K: int, alpha: float = 0.05, on: str = "fisher_z") -> float:
    """Threshold that a zero-correlation pair crosses in any of K windows with prob <= alpha.

    Under the null, the Fisher z of a window correlation is approximately
    Normal(0, 1/(L - 3)); the two-sided per-window level is Bonferroni-split
    over the K windows. For ``on="pearson"`` the z threshold is mapped back
    through tanh.
    """
    if L < 4:
        raise ValidationError("null-calibrated tau needs L >= 4")
    z = norm.ppf(1.0 - alpha / (2.0 * K)) / math.sqrt(L - 3)
    return float(math.tanh(z)) if on == "pearson" else float(z)


@dataclass
class WindowConfig:
    L: int = 39
    s: int = 5
    # a number, or "auto" for null_calibrated_tau(L, K, tau_alpha)
    tau: float | str = "auto"
    tau_alpha: float = 0.05
    # "fisher_z": transform first, threshold |z|; "pearson": threshold |r|
    threshold_on: str = "fisher_z"

    def validate(self, T: int | None = None):
        if self.tau != "auto" and (isinstance(self.tau, str) or self.tau < 0):
            raise ValidationError(f"tau must be 'auto' or a number >= 0, got {self.tau!r}")
        if not 0 < self.tau_alpha < 1:
            raise ValidationError("tau_alpha must lie in (0, 1)")
        if self.L < 2 or self.s < 1:
            raise ValidationError(f"invalid window config L={self.L} s={self.s}")
        if T is not None and self.L > T:
            raise ValidationError(f"window length {self.L} exceeds series length {T}")
        if self.threshold_on not in ("fisher_z", "pearson"):
            raise ValidationError("threshold_on must be 'fisher_z' or 'pearson'")

    def resolve_tau(self, T: int) -> float:
        if self.tau == "auto":
            return null_calibrated_tau(self.L, window_count(T, self.L, self.s), self.tau_alpha,
                                       self.threshold_on)
        return float(self.tau)


@dataclass
class FcMatrix:
    values: np.ndarray
    kind: str = "pearson"
    # number of off-diagonal pairs zeroed because a column had no variance
    zero_variance: int = 0


@dataclass
class DfcResult:
    windows: list[FcMatrix]
    accumulated: np.ndarray
    support: np.ndarray
    fc_vector: np.ndarray
    zero_variance: int = 0
    ranges: list[tuple[int, int]] = field(default_factory=list)
    tau: float = 0.0


def window_count(T: int, L: int, s: int) -> int:
    return math.ceil((T - L) / s) + 1


def sliding_windows(T: int, L: int, s: int) -> list[tuple[int, int]]:
    """Half-open ranges of equal length ``L``.

    Starts are ``0, s, 2s, ...``; the last start is clamped to ``T - L`` so the
    final window ends exactly at ``T``.
    """
    if s < 1:
        raise ValidationError(f"step must be >= 1, got {s}")
    if L < 2 or L > T:
        raise ValidationError(f"need 2 <= L <= T, got L={L}, T={T}")
    K = window_count(T, L, s)
    return [(min(k * s, T - L), min(k * s, T - L) + L) for k in range(K)]


def pearson_matrix(x: np.ndarray) -> FcMatrix:
    """Column-wise Pearson correlation of a (samples x N) block, diagonal zeroed.

    Columns with zero variance correlate as 0 with everything.
    """
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    ss = np.einsum("ij,ij->j", xc, xc)
    ok = ss > 0
    scale = np.zeros_like(ss)
    scale[ok] = 1.0 / np.sqrt(ss[ok])
    xn = xc * scale
    c = xn.T @ xn
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    np.fill_diagonal(c, 0.0)
    n_bad = int((~ok).sum())
    N = x.shape[1]
    flagged = n_bad * (N - 1) - n_bad * (n_bad - 1) // 2
    return FcMatrix(c, "pearson", flagged)


def window_fc(ts: RoiTimeSeries, rng: tuple[int, int]) -> FcMatrix:
    start, end = rng
    if not 0 <= start < end <= ts.T:
        raise ValidationError(f"window {rng} outside [0, {ts.T})")
    if end - start < 2:
        raise ValidationError("window needs at least 2 samples")
    return pearson_matrix(ts.data[start:end])


def fisher_z(C: FcMatrix) -> FcMatrix:
    r = np.clip(C.values, -Z_CLIP, Z_CLIP)
    z = np.arctanh(r)
    np.fill_diagonal(z, 0.0)
    return FcMatrix(z, "fisher_z", C.zero_variance)


def threshold_abs(Z: FcMatrix, tau: float) -> FcMatrix:
    if tau < 0:
        raise ValidationError("tau must be >= 0")
    a = np.abs(Z.values)
    m = np.where(a > tau, a, 0.0)
    np.fill_diagonal(m, 0.0)
    return FcMatrix(m, "thresholded", Z.zero_variance)


def binarize(M: FcMatrix | np.ndarray) -> np.ndarray:
    v = M.values if isinstance(M, FcMatrix) else np.asarray(M)
    A = (v > 0).astype(np.int8)
    np.fill_diagonal(A, 0)
    return A


def accumulate(windows) -> np.ndarray:
    """Elementwise sum over windows, independent of window order.

    Each entry's terms are sorted before a Kahan-compensated pass, so the
    result depends only on the multiset of window values.
    """
    mats = [w.values if isinstance(w, FcMatrix) else np.asarray(w, dtype=float) for w in windows]
    if not mats:
        raise ValidationError("accumulate needs at least one window")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValidationError("all windows must share the same shape")
    stack = np.sort(np.stack(mats), axis=0)
    total = np.zeros(shape)
    comp = np.zeros(shape)
    for m in stack:
        y = m - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def vectorize_upper(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {M.shape}")
    return M[np.triu_indices(M.shape[0], k=1)]


def devectorize_upper(v: np.ndarray, N: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if N is None:
        N = int(round((1 + math.sqrt(1 + 8 * v.size)) / 2))
    if N * (N - 1) // 2 != v.size:
        raise ValidationError(f"vector of length {v.size} is not an upper triangle")
    M = np.zeros((N, N), dtype=v.dtype)
    iu = np.triu_indices(N, k=1)
    M[iu] = v
    M[(iu[1], iu[0])] = v
    return M


def upper_pair_names(N: int) -> list[str]:
    i, j = np.triu_indices(N, k=1)
    return [f"fc_{a}_{b}" for a, b in zip(i, j)]


def compute_dfc(ts: RoiTimeSeries, cfg: WindowConfig | None = None,
                keep_windows: bool = True) -> DfcResult:
    cfg = cfg or WindowConfig()
    cfg.validate(ts.T)
    ranges = sliding_windows(ts.T, cfg.L, cfg.s)
    tau = cfg.resolve_tau(ts.T)
    windows = []
    flagged = 0
    for r in ranges:
        C = window_fc(ts, r)
        flagged += C.zero_variance
        src = fisher_z(C) if cfg.threshold_on == "fisher_z" else C
        windows.append(threshold_abs(src, tau))
    acc = accumulate(windows)
    return DfcResult(
        windows=windows if keep_windows else [],
        accumulated=acc,
        support=binarize(acc),
        fc_vector=vectorize_upper(acc),
        zero_variance=flagged,
        ranges=ranges,
        tau=tau,
    )


def roi_alff(series, dt: float, band: tuple[float, float] = (0.01, 0.08)) -> float:
    """Mean square-root periodogram power of the demeaned series inside ``band`` (Hz)."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 8:
        raise ValidationError("roi_alff needs a 1-D series with at least 8 samples")
    f_lo, f_hi = band
    nyquist = 1.0 / (2.0 * dt)
    if not 0 < f_lo < f_hi < nyquist:
        raise ValidationError(f"band {band} must satisfy 0 < lo < hi < Nyquist ({nyquist} Hz)")
    freqs, psd = periodogram(x, fs=1.0 / dt, detrend="constant", scaling="density")
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    if not np.any(sel):
        raise ValidationError(f"no frequency bins fall inside {band} for T={x.size}, dt={dt}")
    return float(np.mean(np.sqrt(psd[sel])))
