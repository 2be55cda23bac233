"""Ground-truth evaluation of drift detection.

Uses responses (which the detector never sees) to label test windows,
then scores the detector's flags: confusion counts, F1, ROC and the
F1-optimal threshold. Also holds the Monte-Carlo check of the OLS identity
linking prediction error to the disagreement of two independently trained
models.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from drifter._atomic import atomic_write_text
from drifter.data import Dataset, Segment, overlapping_plan, test_plan
from drifter.detector import (
    DEFAULT_L_TE,
    DEFAULT_N_IND,
    SCHEMA_VERSION,
    DriftDetector,
    calibrate_threshold,
    detect,
    drifter_train,
)
from drifter.regress import Predictor, TrainerSpec, fit, fit_ols


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def rmse(f: Predictor, d: Dataset) -> float:
    """Root-mean-square prediction error against the responses of ``d``."""
    if not d.has_response:
        raise ValueError("rmse needs responses")
    if d.n == 0:
        raise ValueError("empty dataset")
    return float(np.sqrt(np.mean((f.predict(d.X) - d.y) ** 2)))


def sigma_emp(d_tr: Dataset, trainer: TrainerSpec, folds: int = 5, multiplier: float = 2.0,
              rng=None) -> float:
    """``multiplier`` times the out-of-fold RMSE of a uniformly random ``folds``-fold split."""
    if not d_tr.has_response:
        raise ValueError("sigma_emp needs responses")
    if not 2 <= folds <= d_tr.n:
        raise ValueError(f"need 2 <= folds <= n_tr, got folds={folds}, n_tr={d_tr.n}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(d_tr.n)
    pred = np.empty(d_tr.n)
    for held in np.array_split(perm, folds):
        keep = np.ones(d_tr.n, dtype=bool)
        keep[held] = False
        sub = Dataset.from_arrays(d_tr.X[keep], d_tr.y[keep])
        pred[held] = fit(trainer, sub).predict(d_tr.X[held])
    return multiplier * float(np.sqrt(np.mean((pred - d_tr.y) ** 2)))


def segment_errors(f: Predictor, d_te: Dataset, l_te: int) -> np.ndarray:
    d = d_te.reindex()
    if not d.has_response:
        raise ValueError("labeling needs responses")
    resid2 = (f.predict(d.X) - d.y) ** 2
    return np.array([np.sqrt(resid2[s.start - 1 : s.end].mean()) for s in test_plan(d.n, l_te)])


def label_segments(f: Predictor, d_te: Dataset, l_te: int, sigma: float) -> list[bool]:
    """True for windows whose prediction RMSE strictly exceeds ``sigma``."""
    return [bool(e > sigma) for e in segment_errors(f, d_te, l_te)]


def confusion(flags: Sequence[bool], labels: Sequence[bool]) -> Confusion:
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise ValueError(f"length mismatch: {flags.size} flags vs {labels.size} labels")
    return Confusion(
        int(np.sum(flags & labels)),
        int(np.sum(flags & ~labels)),
        int(np.sum(~flags & ~labels)),
        int(np.sum(~flags & labels)),
    )


def f1(conf) -> float:
    """``2TP / (2TP + FP + FN)``; NaN when no window is flagged or labeled."""
    tp, fp, _tn, fn = conf
    denom = 2 * tp + fp + fn
    if denom == 0:
        return math.nan
    return 2 * tp / denom


class RocResult(NamedTuple):
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    f1: np.ndarray
    delta_opt: float
    c_opt: float
    f1_opt: float
    degenerate: bool

    @property
    def points(self) -> list[tuple[float, float]]:
        """``(fpr, tpr)`` pairs from the highest threshold down, i.e. starting at (0, 0)."""
        return [(float(a), float(b)) for a, b in zip(self.fpr[::-1], self.tpr[::-1])]

    def auc(self) -> float:
        x, y = self.fpr[::-1], self.tpr[::-1]
        return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def candidate_thresholds(indicators: Sequence[float]) -> np.ndarray:
    """Midpoints between consecutive distinct values plus one sentinel on each side.

    Each sentinel sits half a neighbouring gap beyond the extreme value (half
    a unit when all values coincide), so every distinct flag pattern of
    ``d >= threshold`` is produced exactly once.
    """
    u = np.unique(np.asarray(indicators, dtype=np.float64))
    if u.size == 0:
        return u
    if u.size == 1:
        return np.array([u[0] - 0.5, u[0] + 0.5])
    mids = u[:-1] + (u[1:] - u[:-1]) / 2
    # with near-adjacent floats the midpoint can round down onto the lower value
    mids = np.where(mids > u[:-1], mids, u[1:])
    lo = u[0] - (u[1] - u[0]) / 2
    hi = u[-1] + (u[-1] - u[-2]) / 2
    if not hi > u[-1]:
        hi = np.nextafter(u[-1], np.inf)
    return np.concatenate([[lo], mids, [hi]])


def roc_and_opt(indicators: Sequence[float], labels: Sequence[bool], cal_mean: float,
                cal_sd: float) -> RocResult:
    """Sweep the threshold over all candidates; keep the smallest F1-maximizing one."""
    d = np.asarray(indicators, dtype=np.float64)
    lab = np.asarray(labels, dtype=bool)
    if d.shape != lab.shape:
        raise ValueError("indicators and labels differ in length")
    thr = candidate_thresholds(d)
    pos = int(lab.sum())
    neg = lab.size - pos
    fpr = np.full(thr.size, np.nan)
    tpr = np.full(thr.size, np.nan)
    scores = np.full(thr.size, np.nan)
    for i, t in enumerate(thr):
        conf = confusion(d >= t, lab)
        if pos:
            tpr[i] = conf.tp / pos
        if neg:
            fpr[i] = conf.fp / neg
        scores[i] = f1(conf)
    degenerate = pos == 0 or neg == 0
    if pos == 0:
        # every flag is a false positive; no threshold is meaningfully best
        return RocResult(thr, fpr, tpr, scores, math.nan, math.nan, math.nan, degenerate)
        return RocResult(thr, fpr, tpr, scores, math.nan, math.nan, math.nan, degenerate)
    best = int(np.nanargmax(scores))  # first maximum = smallest threshold
    delta_opt = float(thr[best])
    c_opt = (delta_opt - cal_mean) / cal_sd if cal_sd > 0 else math.nan
    return RocResult(thr, fpr, tpr, scores, delta_opt, float(c_opt), float(scores[best]), degenerate)


def detrend(d_tr: Dataset, d_te: Dataset) -> Dataset:
    """Rescale test responses so their mean equals the training mean."""
    if not (d_tr.has_response and d_te.has_response):
        raise ValueError("detrending needs responses in both datasets")
    test_mean = float(np.mean(d_te.y))
    if test_mean == 0:
        raise ValueError("test responses have zero mean")
    return d_te.with_response(d_te.y * (float(np.mean(d_tr.y)) / test_mean))


@dataclass(frozen=True)
class SegmentRecord:
    segment: Segment
    indicator: float
    true_error: float
    label: bool
    flag: bool


@dataclass
class EvalResult:
    records: list[SegmentRecord]
    confusion: Confusion
    f1: float
    roc: RocResult
    sigma: float
    delta: float
    c: float
    cal_mean: float
    cal_sd: float
    params: dict = field(default_factory=dict)

    @property
    def delta_opt(self) -> float:
        return self.roc.delta_opt

    @property
    def c_opt(self) -> float:
        return self.roc.c_opt

    @property
    def f1_opt(self) -> float:
        return self.roc.f1_opt

    @property
    def indicators(self) -> np.ndarray:
        return np.array([r.indicator for r in self.records])

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records])

    def confusion_at(self, delta: float) -> Confusion:
        return confusion(self.indicators >= delta, self.labels)

    def summary(self) -> dict:
        opt = self.confusion_at(self.delta_opt) if not math.isnan(self.delta_opt) else None
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params,
            "segments": len(self.records),
            "sigma_emp": self.sigma,
            "delta": self.delta,
            "c": self.c,
            "calibration": {"mean": self.cal_mean, "sd": self.cal_sd},
            "confusion": self.confusion._asdict(),
            "f1": _json_float(self.f1),
            "f1_defined": not math.isnan(self.f1),
            "roc_degenerate": self.roc.degenerate,
            "delta_opt": _json_float(self.delta_opt),
            "c_opt": _json_float(self.c_opt),
            "f1_opt": _json_float(self.f1_opt),
            "confusion_opt": None if opt is None else opt._asdict(),
        }

    def segments_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment_start", "segment_end", "indicator", "true_error", "label", "flagged"])
        for r in self.records:
            w.writerow([r.segment.start, r.segment.end, repr(r.indicator), repr(r.true_error),
                        str(r.label).lower(), str(r.flag).lower()])
        return buf.getvalue()

    def roc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr", "f1"])
        for row in zip(self.roc.thresholds, self.roc.fpr, self.roc.tpr, self.roc.f1):
            w.writerow(["" if math.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    def write(self, json_path) -> tuple[str, str, str]:
        """Write the JSON summary and sibling ``*_segments.csv`` / ``*_roc.csv`` files."""
        json_path = str(json_path)
        stem = json_path[:-5] if json_path.endswith(".json") else json_path
        seg_path, roc_path = f"{stem}_segments.csv", f"{stem}_roc.csv"
        atomic_write_text(seg_path, self.segments_csv())
        atomic_write_text(roc_path, self.roc_csv())
        atomic_write_text(json_path, json.dumps(self.summary(), indent=1) + "\n")
        return json_path, seg_path, roc_path


def _json_float(v: float) -> Optional[float]:
    return None if math.isnan(v) or math.isinf(v) else float(v)


def evaluate(d_tr: Dataset, d_te: Dataset, k: int, *, full_trainer: Optional[TrainerSpec] = None,
             segment_trainer: Optional[TrainerSpec] = None, n_ind: int = DEFAULT_N_IND,
             l_te: int = DEFAULT_L_TE, c: float = 5.0, folds: int = 5, multiplier: float = 2.0,
             seed=0, full_model: Optional[Predictor] = None) -> EvalResult:
    """Full protocol: fit the deployed model, label test windows by true error,
    run the detector, and score it at ``c`` and at the F1-optimal threshold."""
    full_trainer = full_trainer or TrainerSpec()
    segment_trainer = segment_trainer or TrainerSpec()
    f = full_model if full_model is not None else fit(full_trainer, d_tr)
    sigma = sigma_emp(d_tr, full_trainer, folds, multiplier, np.random.default_rng(seed))

    ensemble = drifter_train(d_tr, overlapping_plan(d_tr.n, k), segment_trainer)
    cal = calibrate_threshold(d_tr, f, ensemble, n_ind, l_te, c)
    detector = DriftDetector(f, ensemble, n_ind, cal.delta, l_te)
    report = detect(d_te.reduced(), detector)

    errors = segment_errors(f, d_te, l_te)
    labels = errors > sigma
    records = [SegmentRecord(s, float(d), float(e), bool(lab), bool(flag))
               for s, d, e, lab, flag in zip(report.segments, report.indicators, errors, labels, report.flags)]
    conf = confusion(report.flags, labels)
    roc = roc_and_opt(report.indicators, labels, cal.mean, cal.sd)
    params = {"k": k, "n_ind": n_ind, "l_te": l_te, "c": c, "folds": folds, "multiplier": multiplier,
              "seed": seed, "full_model": full_trainer.to_dict(), "segment_model": segment_trainer.to_dict(),
              "n_tr": d_tr.n, "n_te": d_te.n}
    return EvalResult(records, conf, f1(conf), roc, sigma, cal.delta, float(c), cal.mean, cal.sd, params)


@dataclass(frozen=True)
class TheoremReport:
    lhs: float
    rhs: float
    relative_error: float
    trials: int
    skipped: int
    n: int
    n_prime: int
    m: int
    sigma_y: float
    n_eval: int

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **self.__dict__}


def disagreement_weight(n: int, n_prime: int) -> float:
    """Factor ``1 / (1 + n/n')`` mapping expected model disagreement to excess error."""
    return 1.0 / (1.0 + n / n_prime)


def verify_theorem(n: int, n_prime: int, m: int, sigma_y: float, n_eval: int = 100,
                   trials: int = 2000, rng=None) -> TheoremReport:
    """Monte-Carlo estimate of both sides of

        E[(f(x) - y)^2] = E[(f(x) - f'(x))^2] / (1 + n/n') + sigma_y^2

    for OLS models ``f``, ``f'`` fit on independent samples of sizes ``n`` and
    ``n'``. Covariates are i.i.d. standard normal plus an intercept, i.e.
    centered and decorrelated, which is the setting where the identity holds
    to leading order in 1/n.
    """
    if n < 10 * m or n_prime < 10 * m:
        raise ValueError(f"need n, n' >= 10*m = {10 * m}; got n={n}, n'={n_prime}")
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if sigma_y < 0 or n_eval < 1:
        raise ValueError("need sigma_y >= 0 and n_eval >= 1")
    streams = np.random.default_rng(rng).spawn(trials)

    sq_err = 0.0
    sq_diff = 0.0
    used = 0
    skipped = 0
    for g in streams:
        beta = g.standard_normal(m + 1)
        X_a = g.standard_normal((n, m))
        X_b = g.standard_normal((n_prime, m))
        Z = g.standard_normal((n_eval, m))
        y_a = beta[0] + X_a @ beta[1:] + sigma_y * g.standard_normal(n)
        y_b = beta[0] + X_b @ beta[1:] + sigma_y * g.standard_normal(n_prime)
        y_eval = beta[0] + Z @ beta[1:] + sigma_y * g.standard_normal(n_eval)
        try:
            f_a = fit_ols(X_a, y_a, ridge_fallback=0.0)
            f_b = fit_ols(X_b, y_b, ridge_fallback=0.0)
        except np.linalg.LinAlgError:
            skipped += 1
            continue
        p_a = f_a.predict(Z)
        sq_err += float(np.sum((p_a - y_eval) ** 2))
        sq_diff += float(np.sum((p_a - f_b.predict(Z)) ** 2))
        used += 1
    if skipped > 0.01 * trials:
        raise RuntimeError(f"{skipped} of {trials} trials had singular fits")

    count = used * n_eval
    lhs = sq_err / count
    rhs = disagreement_weight(n, n_prime) * sq_diff / count + sigma_y ** 2
    rel = abs(lhs - rhs) / lhs if lhs > 0 else (0.0 if rhs == 0 else math.inf)
    return TheoremReport(lhs, rhs, rel, trials, skipped, n, n_prime, m, float(sigma_y), n_eval)
