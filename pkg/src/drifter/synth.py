"""Synthetic regression benchmark with injected virtual drift.

Covariates are independent stationary AR(1) columns; the response is
``sin(row sum of covariates)`` plus Gaussian noise. Inside the drift interval
the covariate rows are rescaled, which changes p(x) but leaves p(y|x) alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from drifter._atomic import atomic_write_text
from drifter.data import Dataset, Segment, write_csv

GENERATOR = "numpy.random.Generator(PCG64)"


@dataclass(frozen=True)
class SynthSpec:
    n: int = 2000
    m: int = 5
    h: float = 150.0
    amp: float = 1.0
    sigma_n: float = 0.3
    drift_interval: Optional[Segment] = None
    drift_amp: float = 5.0
    seed: int = 0

    @classmethod
    def benchmark(cls, seed: int = 0, drift: bool = True) -> "SynthSpec":
        """synthetic(2000, 5): h=150, amp=1, noise 0.3, amp 5 over [1700, 1800]."""
        return cls(2000, 5, 150.0, 1.0, 0.3, Segment(1700, 1800) if drift else None, 5.0, seed)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if self.h < 1:
            raise ValueError("correlation length h must be >= 1")
        if self.amp <= 0:
            raise ValueError("amp must be positive")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")
        if self.drift_interval is not None and self.drift_interval.end > self.n:
            raise ValueError(f"drift interval {self.drift_interval.as_tuple()} outside [1, {self.n}]")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["drift_interval"] = None if self.drift_interval is None else list(self.drift_interval.as_tuple())
        return out


def ar1_coefficient(h: float) -> float:
    """AR(1) coefficient whose lag-``h`` autocorrelation is exactly 0.5."""
    return 2.0 ** (-1.0 / h)


def _ar1_columns(n: int, m: int, h: float, amp: float, rng: np.random.Generator) -> np.ndarray:
    phi = ar1_coefficient(h)
    shocks = rng.standard_normal((n, m))
    shocks[0] *= amp
    shocks[1:] *= amp * np.sqrt(1.0 - phi * phi)
    return lfilter([1.0], [1.0, -phi], shocks, axis=0)


def ar1_series(n: int, h: float, amp: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) path with standard deviation ``amp`` started in equilibrium."""
    if n < 1 or h < 1 or amp <= 0:
        raise ValueError("need n >= 1, h >= 1 and amp > 0")
    return _ar1_columns(n, 1, h, amp, rng)[:, 0]


def generate(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    X = _ar1_columns(spec.n, spec.m, spec.h, spec.amp, rng)
    if spec.drift_interval is not None:
        s = spec.drift_interval
        X[s.start - 1 : s.end] *= spec.drift_amp / spec.amp
    noise = rng.standard_normal(spec.n) * spec.sigma_n
    y = np.sin(X.sum(axis=1)) + noise
    return Dataset.from_arrays(X, y)


def metadata(spec: SynthSpec) -> dict:
    return {"spec": spec.to_dict(), "generator": GENERATOR, "numpy_version": np.__version__}


def write(spec: SynthSpec, csv_path, sidecar_path=None) -> Dataset:
    """Generate and write ``x1..xm,y`` CSV plus a JSON sidecar (default ``<csv>.json``)."""
    d = generate(spec)
    sidecar_path = sidecar_path or f"{csv_path}.json"
    write_csv(d, csv_path)
    atomic_write_text(sidecar_path, json.dumps({"schema_version": 1, **metadata(spec)}, indent=1) + "\n")
    return d
