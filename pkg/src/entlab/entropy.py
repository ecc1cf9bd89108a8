"""Token-entropy analytics over generation traces.

Per-step Shannon entropy of the next-token distribution, its running
cumulative average, and the curve operations (resampling, averaging,
high-entropy step detection, tail statistics) used by the analysis
pipeline and the reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "LogitTrace",
    "EntropySeries",
    "TecaCurve",
    "NormalizedCurve",
    "token_entropy",
    "entropy_series",
    "teca",
    "normalize_curve",
    "average_curves",
    "forking_steps",
    "tail_drop",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LogitTrace:
    """Raw pre-softmax scores for every step of one generated response.

    ``logits`` has shape (steps, vocab); ``temperature`` is the divisor
    used when mapping logits to probabilities.
    """

    logits: np.ndarray
    temperature: float

    def __post_init__(self):
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError("trace logits must be 2-D (steps, vocab)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("trace needs at least one step and one vocab entry")
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
            raise InvalidInputError(f"step {bad}: non-finite logit")
        if not (math.isfinite(self.temperature) and self.temperature > 0):
            raise InvalidInputError("temperature must be a finite positive real")
        object.__setattr__(self, "logits", _freeze(arr))

    @classmethod
    def from_steps(cls, steps: Iterable[Sequence[float]], temperature: float) -> "LogitTrace":
        return cls(np.asarray(list(steps), dtype=np.float64), temperature)

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[1]

    def __len__(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True)
class EntropySeries:
    """Per-step entropies in nats, one value per generated token."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidInputError("entropy series must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidInputError("entropies must be finite and nonnegative")
        object.__setattr__(self, "values", _freeze(arr))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class TecaCurve:
    """Running mean of per-step entropies (token-entropy cumulative average)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise InvalidInputError("curve must be a nonempty 1-D sequence")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def last(self) -> float:
        """Value at the final generated step."""
        return float(self.values[-1])

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class NormalizedCurve:
    """A curve resampled onto a fixed number of points.

    ``source_length`` is the step count of the original curve; for
    averaged curves it is the mean of the inputs' source lengths.
    """

    points: np.ndarray
    source_length: float

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise InvalidInputError("normalized curve needs at least 2 points")
        object.__setattr__(self, "points", _freeze(arr))

    def __len__(self) -> int:
        return self.points.shape[0]


def _entropy_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Entropy of softmax(z / T) for each row of a (n, vocab) matrix."""
    z = logits / temperature
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    h = -(np.exp(logp) * logp).sum(axis=-1)
    return np.maximum(h, 0.0)


def token_entropy(logits: Sequence[float] | np.ndarray, temperature: float) -> float:
    """Shannon entropy (nats) of softmax(logits / temperature).

    Uses max-subtraction so any finite logit vector is handled without
    overflow.  The result lies in [0, ln(vocab)].
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError("logits must be a nonempty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("non-finite logit")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInputError("temperature must be a finite positive real")
    return float(_entropy_rows(arr[None, :], temperature)[0])


def entropy_series(trace: LogitTrace | np.ndarray, temperature: float | None = None) -> EntropySeries:
    """Per-step entropies for a whole trace.

    Accepts a validated ``LogitTrace`` (temperature taken from the trace)
    or a raw (steps, vocab) array plus an explicit temperature; the raw
    path reports the failing step index on bad input.
    """
    if isinstance(trace, LogitTrace):
        return EntropySeries(_entropy_rows(trace.logits, trace.temperature))
    arr = np.asarray(trace, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise InvalidInputError("trace must be 2-D (steps, vocab)")
    if temperature is None:
        raise InvalidInputError("temperature required for raw logit arrays")
    finite = np.isfinite(arr).all(axis=1)
    if not finite.all():
        step = int(np.argmin(finite))
        raise InvalidInputError(f"step {step}: non-finite logit")
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInputError("temperature must be a finite positive real")
    return EntropySeries(_entropy_rows(arr, temperature))


def teca(series: EntropySeries | Sequence[float] | np.ndarray) -> TecaCurve:
    """Cumulative average of the entropy series.

    Computed by the running-mean recurrence m_t = m_{t-1} + (H_t - m_{t-1}) / t,
    which agrees with direct prefix-sum means to ~1e-13 even on very long
    series.
    """
    values = series.values if isinstance(series, EntropySeries) else np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise InvalidInputError("series must be a nonempty 1-D sequence")
    out = np.empty(values.shape[0], dtype=np.float64)
    mean = 0.0
    for t, h in enumerate(values.tolist(), start=1):
        mean += (h - mean) / t
        out[t - 1] = mean
    return TecaCurve(out)


def normalize_curve(curve: TecaCurve | EntropySeries | Sequence[float] | np.ndarray,
                    n_points: int = 100) -> NormalizedCurve:
    """Resample a curve onto ``n_points`` positions evenly spaced over its span.

    Linear interpolation between neighboring source points; the first and
    last points are preserved exactly.  Curves shorter than 2 steps cannot
    be interpolated and are rejected.
    """
    values = curve.values if isinstance(curve, (TecaCurve, EntropySeries)) else np.asarray(curve, dtype=np.float64)
    if values.ndim != 1:
        raise InvalidInputError("curve must be 1-D")
    length = values.shape[0]
    if length < 2:
        raise InvalidInputError("cannot interpolate a curve with fewer than 2 points")
    if n_points < 2:
        raise InvalidInputError("n_points must be at least 2")
    positions = np.linspace(0.0, length - 1, n_points)
    points = np.interp(positions, np.arange(length), values)
    # guard endpoint identity against interpolation rounding
    points[0] = values[0]
    points[-1] = values[-1]
    return NormalizedCurve(points, source_length=float(length))


def average_curves(curves: Sequence[NormalizedCurve]) -> NormalizedCurve:
    """Pointwise arithmetic mean of same-length normalized curves."""
    if not curves:
        raise InvalidInputError("cannot average an empty list of curves")
    n = len(curves[0])
    if any(len(c) != n for c in curves):
        raise InvalidInputError("all curves must share the same number of points")
    stacked = np.stack([c.points for c in curves])
    mean_len = float(np.mean([c.source_length for c in curves]))
    return NormalizedCurve(stacked.mean(axis=0), source_length=mean_len)


def forking_steps(series: EntropySeries | Sequence[float] | np.ndarray,
                  quantile: float = 0.2) -> set[int]:
    """Indices of the highest-entropy steps (the top ``quantile`` fraction).

    The threshold is the k-th largest value with k = ceil(quantile * len);
    every step at or above it is included, so ties at the cut are all kept
    (a constant series yields every index).
    """
    values = series.values if isinstance(series, EntropySeries) else np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise InvalidInputError("series must be a nonempty 1-D sequence")
    if not (0.0 < quantile < 1.0):
        raise InvalidInputError("quantile must lie strictly inside (0, 1)")
    length = values.shape[0]
    k = math.ceil(quantile * length)
    threshold = np.partition(values, length - k)[length - k]
    return {int(i) for i in np.flatnonzero(values >= threshold)}


def tail_drop(curve: TecaCurve | NormalizedCurve | Sequence[float] | np.ndarray,
              tail_fraction: float = 0.1) -> float:
    """Peak value minus the mean over the final ``tail_fraction`` of steps.

    Positive values indicate the curve settles below its peak toward the
    end; a non-decreasing curve whose maximum sits inside the tail window
    scores 0.
    """
    if isinstance(curve, (TecaCurve, EntropySeries)):
        values = curve.values
    elif isinstance(curve, NormalizedCurve):
        values = curve.points
    else:
        values = np.asarray(curve, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise InvalidInputError("curve needs at least 2 points")
    if not (0.0 < tail_fraction < 1.0):
        raise InvalidInputError("tail_fraction must lie strictly inside (0, 1)")
    m = math.ceil(tail_fraction * values.shape[0])
    return float(values.max() - values[-m:].mean())
