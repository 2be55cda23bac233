"""Segment-model ensembles and the model-disagreement drift indicator.

Training fits one regressor per (overlapping) training segment. At test time
each segment model is compared with the deployed model on the unlabeled test
window; the ``n_ind``-th smallest root-mean-square disagreement is the drift
indicator. A window is flagged when its indicator reaches the threshold
``delta = mean + c * sd`` of indicators computed on training windows.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from drifter._atomic import atomic_write_text
from drifter.data import Dataset, Segment, SegmentationPlan, slice as slice_dataset, test_plan
from drifter.regress import (
    Predictor,
    TrainerSpec,
    fit,
    model_from_dict,
    model_to_dict,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_N_IND = 2
DEFAULT_L_TE = 15


class SegmentFitError(RuntimeError):
    def __init__(self, position: int, segment: Segment, cause: Exception):
        super().__init__(f"fitting segment model {position + 1} on {segment.as_tuple()} failed: {cause}")
        self.position = position
        self.segment = segment


class TestLengthWarning(UserWarning):
    """Test window longer than the training segments (indicator biased upward)."""

    __test__ = False


@dataclass(frozen=True)
class SegmentEnsemble:
    models: tuple
    plan: SegmentationPlan
    trainer: TrainerSpec = field(default_factory=TrainerSpec)

    def __post_init__(self):
        if len(self.models) != len(self.plan):
            raise ValueError("one model per plan segment is required")
        if len({mdl.m for mdl in self.models}) > 1:
            raise ValueError("segment models disagree on covariate dimension")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def m(self) -> int:
        return self.models[0].m

    def predict_all(self, X) -> np.ndarray:
        """Predictions of every segment model, shape ``(n, len(self))``.

        Each model goes through its own ``predict`` so a segment model equal to
        the full model reproduces its predictions bit for bit.
        """
        X = np.asarray(X, dtype=np.float64)
        return np.column_stack([mdl.predict(X) for mdl in self.models])


def drifter_train(d_tr: Dataset, plan: SegmentationPlan, trainer: Optional[TrainerSpec] = None) -> SegmentEnsemble:
    """Fit one segment model per segment of ``plan``, in plan order."""
    trainer = trainer or TrainerSpec()
    if not d_tr.has_response:
        raise ValueError("training data must carry responses")
    models = []
    for i, seg in enumerate(plan):
        try:
            models.append(fit(trainer, slice_dataset(d_tr, seg)))
        except Exception as exc:
            raise SegmentFitError(i, seg, exc) from exc
    return SegmentEnsemble(tuple(models), plan, trainer)


def _rms(a: np.ndarray, b: np.ndarray, axis=None):
    return np.sqrt(np.mean((a - b) ** 2, axis=axis))


def rmse_star(f: Predictor, f_i: Predictor, d_te: Dataset) -> float:
    """Root-mean-square difference of two predictors over the covariates of ``d_te``."""
    if d_te.n == 0:
        raise ValueError("empty test data")
    return float(_rms(f.predict(d_te.X), f_i.predict(d_te.X)))


def nth_smallest(z: Sequence[float], n_ind: int) -> float:
    z = np.asarray(z, dtype=np.float64)
    if not 1 <= n_ind <= z.size:
        raise ValueError(f"n_ind={n_ind} outside [1, {z.size}]")
    return float(np.partition(z, n_ind - 1)[n_ind - 1])


def disagreements(full_pred: np.ndarray, ensemble_pred: np.ndarray) -> np.ndarray:
    """Per-model RMS disagreement over a window; ``ensemble_pred`` is ``(n, k)``."""
    return _rms(ensemble_pred, np.asarray(full_pred)[:, None], axis=0)


def _check_length(n_te: int, F: SegmentEnsemble) -> None:
    l_tr = F.plan.nominal_length
    if n_te > l_tr:
        warnings.warn(
            f"test window of {n_te} samples exceeds training segment length {l_tr}; "
            "the indicator may report drift where there is none",
            TestLengthWarning,
            stacklevel=3,
        )


def drifter_test(d_te: Dataset, f: Predictor, F: SegmentEnsemble, n_ind: int = DEFAULT_N_IND) -> float:
    """Drift indicator for one unlabeled test window. Responses are ignored."""
    if d_te.n == 0:
        raise ValueError("empty test data")
    if not 1 <= n_ind <= len(F):
        raise ValueError(f"n_ind={n_ind} outside [1, {len(F)}]")
    _check_length(d_te.n, F)
    z = disagreements(f.predict(d_te.X), F.predict_all(d_te.X))
    return nth_smallest(z, n_ind)


def window_indicators(d: Dataset, f: Predictor, F: SegmentEnsemble, plan: SegmentationPlan,
                      n_ind: int = DEFAULT_N_IND) -> np.ndarray:
    """:func:`drifter_test` on every segment of ``plan`` over ``d``.

    Full-model and ensemble predictions are computed once for all rows, then
    reduced per window; values match calling :func:`drifter_test` per window.
    """
    if not 1 <= n_ind <= len(F):
        raise ValueError(f"n_ind={n_ind} outside [1, {len(F)}]")
    if len(plan) == 0:
        return np.empty(0)
    _check_length(max(len(s) for s in plan), F)
    full = f.predict(d.X)
    ens = F.predict_all(d.X)
    out = np.empty(len(plan))
    for j, seg in enumerate(plan):
        lo = int(np.searchsorted(d.index, seg.start))
        hi = int(np.searchsorted(d.index, seg.end, side="right"))
        out[j] = nth_smallest(disagreements(full[lo:hi], ens[lo:hi]), n_ind)
    return out


class Calibration(NamedTuple):
    delta: float
    indicators: np.ndarray
    mean: float
    sd: float
    c: float


def threshold_from(indicators: Sequence[float], c: float) -> tuple[float, float, float]:
    """``(mean + c * sd, mean, sd)`` with the sample (n - 1) standard deviation."""
    d = np.asarray(indicators, dtype=np.float64)
    if d.size < 2:
        raise ValueError("at least 2 calibration indicators are needed for a standard deviation")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    return mean + c * sd, mean, sd


def calibrate_threshold(d_tr: Dataset, f: Predictor, F: SegmentEnsemble, n_ind: int = DEFAULT_N_IND,
                        l_te: int = DEFAULT_L_TE, c: float = 5.0) -> Calibration:
    """Threshold from indicators on disjoint length-``l_te`` windows of the training data.

    The ensemble trained on all of ``d_tr`` is reused, so these windows were
    seen during training and the resulting threshold is optimistic.
    """
    plan = test_plan(d_tr.n, l_te)
    if len(plan) < 2:
        raise ValueError(f"training data of {d_tr.n} rows gives {len(plan)} calibration windows of "
                         f"length {l_te}; at least 2 are needed")
    ind = window_indicators(d_tr.reindex(), f, F, plan, n_ind)
    delta, mean, sd = threshold_from(ind, c)
    return Calibration(delta, ind, mean, sd, float(c))


@dataclass(frozen=True)
class DriftReport:
    segments: tuple[Segment, ...]
    indicators: np.ndarray
    flags: np.ndarray
    delta: float

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flags))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment_start", "segment_end", "indicator", "flagged"])
        for s, d, flag in zip(self.segments, self.indicators, self.flags):
            w.writerow([s.start, s.end, repr(float(d)), "true" if flag else "false"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


@dataclass(frozen=True)
class DriftDetector:
    """Deployed model, segment ensemble and threshold.

    ``full_model`` may be ``None`` when the deployed model is only available
    as precomputed predictions; pass those to :func:`detect` instead.
    """

    full_model: Optional[Predictor]
    ensemble: SegmentEnsemble
    n_ind: int = DEFAULT_N_IND
    delta: Optional[float] = None
    l_te: int = DEFAULT_L_TE
    calibration: Optional[dict] = None

    def __post_init__(self):
        if not 1 <= self.n_ind <= len(self.ensemble):
            raise ValueError(f"n_ind={self.n_ind} outside [1, {len(self.ensemble)}]")
        if self.l_te < 1:
            raise ValueError("l_te must be >= 1")

    @property
    def m(self) -> int:
        return self.ensemble.m

    def with_delta(self, delta: float) -> "DriftDetector":
        return replace(self, delta=float(delta))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "full_model": None if self.full_model is None else model_to_dict(self.full_model),
            "segment_models": [model_to_dict(mdl) for mdl in self.ensemble.models],
            "plan": self.ensemble.plan.to_dict(),
            "trainer": self.ensemble.trainer.to_dict(),
            "n_ind": self.n_ind,
            "l_te": self.l_te,
            "delta": self.delta,
            "calibration": self.calibration,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def from_dict(cls, payload: dict) -> "DriftDetector":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported detector schema_version {version!r}")
        full = payload.get("full_model")
        ensemble = SegmentEnsemble(
            tuple(model_from_dict(p) for p in payload["segment_models"]),
            SegmentationPlan.from_dict(payload["plan"]),
            TrainerSpec.from_dict(payload["trainer"]),
        )
        delta = payload.get("delta")
        return cls(
            None if full is None else model_from_dict(full),
            ensemble,
            int(payload["n_ind"]),
            None if delta is None else float(delta),
            int(payload["l_te"]),
            payload.get("calibration"),
        )

    @classmethod
    def load(cls, path) -> "DriftDetector":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_detector(d_tr: Dataset, full_model: Predictor, plan: SegmentationPlan,
                   trainer: Optional[TrainerSpec] = None, n_ind: int = DEFAULT_N_IND,
                   l_te: int = DEFAULT_L_TE, c: Optional[float] = 5.0) -> DriftDetector:
    """Train the ensemble and, unless ``c`` is None, calibrate the threshold."""
    F = drifter_train(d_tr, plan, trainer)
    det = DriftDetector(full_model, F, n_ind, None, l_te)
    if c is None:
        return det
    cal = calibrate_threshold(d_tr, full_model, F, n_ind, l_te, c)
    logger.info("calibrated delta=%.6g from %d windows (mean=%.6g sd=%.6g c=%g)",
                cal.delta, len(cal.indicators), cal.mean, cal.sd, c)
    return replace(det, delta=cal.delta,
                   calibration={"c": cal.c, "mean": cal.mean, "sd": cal.sd,
                                "windows": int(len(cal.indicators)), "l_te": l_te})


def detect(d_te: Dataset, detector: DriftDetector, full_model: Optional[Predictor] = None) -> DriftReport:
    """Split ``d_te`` into length-``l_te`` windows and flag those with ``d >= delta``."""
    if detector.delta is None or math.isnan(detector.delta):
        raise ValueError("detector has no threshold; calibrate it or set delta")
    f = full_model if full_model is not None else detector.full_model
    if f is None:
        raise ValueError("detector has no full model; supply its predictions")
    if d_te.m != detector.m:
        raise ValueError(f"dimension mismatch: detector expects m={detector.m}, data has m={d_te.m}")
    if d_te.n < detector.l_te:
        raise ValueError(f"test data has {d_te.n} rows, shorter than one window (l_te={detector.l_te})")
    plan = test_plan(d_te.n, detector.l_te)
    ind = window_indicators(d_te.reindex(), f, detector.ensemble, plan, detector.n_ind)
    return DriftReport(plan.segments, ind, ind >= detector.delta, float(detector.delta))
