import json
import math
import statistics
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drifter.data import Dataset, Segment, SegmentationPlan, overlapping_plan, slice, test_plan
from drifter.detector import (
    DriftDetector,
    SegmentEnsemble,
    SegmentFitError,
    TestLengthWarning,
    build_detector,
    calibrate_threshold,
    detect,
    drifter_test,
    drifter_train,
    rmse_star,
    threshold_from,
    window_indicators,
)
from drifter.regress import KNNModel, ModelKind, OLSModel, TrainerSpec, fit
from drifter.synth import SynthSpec, generate


def const(v, m=1):
    return OLSModel(np.r_[v, np.zeros(m)])


def ensemble_of(models):
    plan = SegmentationPlan(tuple(Segment(1, 20) for _ in models), 20)
    return SegmentEnsemble(tuple(models), plan)


@pytest.fixture(scope="module")
def toy15():
    """Fifteen 1-d points on a bend, like the running example with a held-out region."""
    x = np.linspace(0.0, 3.0, 15)
    y = np.sin(x) + 0.05 * np.cos(7 * x)
    return Dataset.from_arrays(x, y)


@pytest.fixture(scope="module")
def synthetic_split():
    d = generate(SynthSpec.benchmark(seed=4))
    return d.rows(0, 1000).reindex(), d.rows(1000, 2000).reindex()


def test_train_on_toy_segments(toy15):
    plan = SegmentationPlan(tuple(Segment(a, b) for a, b in [(1, 6), (4, 9), (7, 12), (10, 15)]), 15)
    F = drifter_train(toy15, plan, TrainerSpec())
    assert len(F) == 4
    for mdl, seg in zip(F.models, plan):
        ref = fit(TrainerSpec(), slice(toy15, seg))
        assert mdl.coef.tobytes() == ref.coef.tobytes()
    # each local line tracks the nonlinear full model on its own segment better than elsewhere
    f = KNNModel(toy15.X, toy15.y, 1)
    for i, (mdl, seg) in enumerate(zip(F.models, plan)):
        own = rmse_star(f, mdl, slice(toy15, seg).reduced())
        others = [rmse_star(f, mdl, slice(toy15, s).reduced()) for j, s in enumerate(plan) if abs(i - j) > 1]
        assert all(own < o for o in others)
    # test points beyond the training range are far from every concept
    far = Dataset.from_arrays(np.array([[4.5], [5.0], [5.5]]))
    near = Dataset.from_arrays(np.array([[1.0], [1.1], [1.2]]))
    assert drifter_test(far, f, F, 2) > 5 * drifter_test(near, f, F, 2)


def test_single_segment_plan_equals_full_fit(toy15):
    F = drifter_train(toy15, SegmentationPlan((Segment(1, 15),), 15))
    assert F.models[0].coef.tobytes() == fit(TrainerSpec(), toy15).coef.tobytes()


def test_train_k10_counts(synthetic_split):
    tr, _ = synthetic_split
    plan = overlapping_plan(tr.n, 10)
    F = drifter_train(tr, plan)
    assert len(F) == 2 * 10 - 1 == 19
    assert [len(s) for s in plan] == [100] * 19
    for mdl, seg in zip(F.models, plan):
        assert mdl.coef.tobytes() == fit(TrainerSpec(), slice(tr, seg)).coef.tobytes()


def test_train_failure_names_segment():
    d = Dataset.from_arrays(np.ones((6, 1)), np.ones(6))
    plan = SegmentationPlan((Segment(1, 3), Segment(4, 6)), 6)
    bad = TrainerSpec(ModelKind.OLS, ridge_fallback=0.0)
    with pytest.raises(SegmentFitError, match=r"\(1, 3\)"):
        drifter_train(d, plan, bad)


def test_train_requires_responses(toy15):
    with pytest.raises(ValueError):
        drifter_train(toy15.reduced(), SegmentationPlan((Segment(1, 15),), 15))


def test_rmse_star_examples():
    d = Dataset.from_arrays([[1.0], [2.0]])
    f, g = OLSModel([0.0, 1.0]), OLSModel([0.0, 2.0])
    assert rmse_star(f, f, d) == 0.0
    assert rmse_star(f, g, d) == pytest.approx(math.sqrt(2.5), rel=1e-15)
    with pytest.raises(ValueError):
        rmse_star(f, g, Dataset.from_arrays(np.zeros((0, 1))))


def test_rmse_star_ignores_responses():
    X = np.array([[1.0], [2.0], [3.0]])
    f, g = OLSModel([0.5, 1.0]), OLSModel([0.0, -1.0])
    assert rmse_star(f, g, Dataset.from_arrays(X, [9.0, 9.0, 9.0])) == rmse_star(f, g, Dataset.from_arrays(X))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2),
       st.floats(-20, 20), st.integers(0, 1000))
def test_rmse_star_homogeneous_and_nonnegative(cf, cg, alpha, seed):
    d = Dataset.from_arrays(np.random.default_rng(seed).normal(size=(7, 1)))
    f, g = OLSModel(cf), OLSModel(cg)
    base = rmse_star(f, g, d)
    assert base >= 0
    scaled = rmse_star(OLSModel(alpha * np.array(cf)), OLSModel(alpha * np.array(cg)), d)
    assert scaled == pytest.approx(abs(alpha) * base, rel=1e-9, abs=1e-9)


def test_drifter_test_second_smallest():
    d = Dataset.from_arrays(np.zeros((4, 1)))
    F = ensemble_of([const(3.0), const(1.0), const(2.0)])
    assert drifter_test(d, const(0.0), F, 2) == 2.0
    assert drifter_test(d, const(0.0), F, 1) == 1.0
    assert drifter_test(d, const(0.0), F, 3) == 3.0


def test_drifter_test_exact_copy_gives_zero():
    f = OLSModel([0.3, -1.2])
    d = Dataset.from_arrays(np.random.default_rng(1).normal(size=(10, 1)))
    assert drifter_test(d, f, ensemble_of([const(5.0), f, const(-2.0)]), 1) == 0.0


def test_drifter_test_duplicate_models():
    g = OLSModel([1.0, 2.0])
    d = Dataset.from_arrays(np.random.default_rng(1).normal(size=(10, 1)))
    F = ensemble_of([g, g])
    assert drifter_test(d, const(0.0), F, 1) == drifter_test(d, const(0.0), F, 2)


def test_drifter_test_errors():
    F = ensemble_of([const(1.0), const(2.0)])
    d = Dataset.from_arrays(np.zeros((3, 1)))
    for bad in (0, 3):
        with pytest.raises(ValueError, match="n_ind"):
            drifter_test(d, const(0.0), F, bad)
    with pytest.raises(ValueError, match="empty"):
        drifter_test(Dataset.from_arrays(np.zeros((0, 1))), const(0.0), F, 1)


def test_long_test_window_warns_but_computes():
    F = ensemble_of([const(1.0), const(2.0)])
    with pytest.warns(TestLengthWarning):
        assert drifter_test(Dataset.from_arrays(np.zeros((25, 1))), const(0.0), F, 1) == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        drifter_test(Dataset.from_arrays(np.zeros((20, 1))), const(0.0), F, 1)


@st.composite
def random_setup(draw):
    seed = draw(st.integers(0, 10_000))
    k = draw(st.integers(2, 12))
    m = draw(st.integers(1, 4))
    rng = np.random.default_rng(seed)
    models = [OLSModel(rng.normal(size=m + 1)) for _ in range(k)]
    f = OLSModel(rng.normal(size=m + 1))
    d = Dataset.from_arrays(rng.normal(size=(draw(st.integers(1, 15)), m)))
    return f, models, d, rng


@settings(max_examples=80, deadline=None)
@given(random_setup())
def test_indicator_monotone_in_n_ind(setup):
    f, models, d, _ = setup
    F = ensemble_of(models)
    values = [drifter_test(d, f, F, n) for n in range(1, len(F) + 1)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert min(values) >= 0


@settings(max_examples=80, deadline=None)
@given(random_setup(), st.integers(1, 3))
def test_indicator_permutation_invariant(setup, n_ind):
    f, models, d, rng = setup
    n_ind = min(n_ind, len(models))
    a = drifter_test(d, f, ensemble_of(models), n_ind)
    b = drifter_test(d, f, ensemble_of([models[i] for i in rng.permutation(len(models))]), n_ind)
    assert a == b


@settings(max_examples=60, deadline=None)
@given(random_setup(), st.integers(1, 3))
def test_indicator_zero_iff_enough_exact_copies(setup, copies):
    f, models, d, _ = setup
    copies = min(copies, len(models))
    with_copies = [f] * copies + models[copies:]
    F = ensemble_of(with_copies)
    assert drifter_test(d, f, F, copies) == 0.0
    if copies < len(F):
        # generic random models never agree exactly with f
        assert drifter_test(d, f, F, copies + 1) > 0.0


def test_threshold_arithmetic():
    delta, mean, sd = threshold_from([1, 2, 3, 4], 1.0)
    assert delta == pytest.approx(2.5 + statistics.stdev([1, 2, 3, 4]), rel=1e-15)
    assert delta == pytest.approx(3.7909944487358054, rel=1e-15)
    assert threshold_from([1, 2, 3, 4], 0.0)[0] == 2.5
    assert threshold_from([0.7] * 5, 9.0)[0] == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(ValueError):
        threshold_from([1.0], 1.0)


def test_calibration_matches_per_window_oracle(synthetic_split):
    tr, _ = synthetic_split
    f = fit(TrainerSpec(), tr)
    F = drifter_train(tr, overlapping_plan(tr.n, 60))
    cal = calibrate_threshold(tr, f, F, 2, 15, 1.747)
    windows = test_plan(tr.n, 15)
    assert len(cal.indicators) == 66
    brute = [drifter_test(slice(tr, s).reduced(), f, F, 2) for s in windows]
    np.testing.assert_allclose(cal.indicators, brute, rtol=1e-12)
    assert cal.delta == pytest.approx(np.mean(brute) + 1.747 * np.std(brute, ddof=1), rel=1e-12)


def test_calibration_needs_two_windows(toy15):
    F = drifter_train(toy15, SegmentationPlan((Segment(1, 15),), 15))
    with pytest.raises(ValueError, match="at least 2"):
        calibrate_threshold(toy15, F.models[0], F, 1, 8, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 10), st.floats(-3, 10))
def test_delta_affine_in_c(c1, c2):
    ind = np.array([0.3, 0.1, 0.9, 0.4, 0.45])
    d1, _, sd = threshold_from(ind, c1)
    d2, _, _ = threshold_from(ind, c2)
    assert d2 - d1 == pytest.approx((c2 - c1) * sd, abs=1e-12)


@pytest.fixture(scope="module")
def trained(synthetic_split):
    tr, te = synthetic_split
    f = fit(TrainerSpec(), tr)
    det = build_detector(tr, f, overlapping_plan(tr.n, 60), c=5.0)
    return tr, te, f, det


def test_flagged_set_shrinks_as_c_grows(trained):
    tr, te, f, det = trained
    previous = None
    for c in [-1.0, 0.0, 1.0, 2.5, 5.0, 10.0]:
        cal = calibrate_threshold(tr, f, det.ensemble, 2, 15, c)
        flagged = set(np.flatnonzero(detect(te.reduced(), det.with_delta(cal.delta)).flags))
        if previous is not None:
            assert flagged <= previous
        previous = flagged


def test_self_detection_respects_mean(trained):
    tr, _, f, det = trained
    for c in (0.0, 0.5, 5.0):
        cal = calibrate_threshold(tr, f, det.ensemble, 2, 15, c)
        report = detect(tr.reduced(), det.with_delta(cal.delta))
        np.testing.assert_allclose(report.indicators, cal.indicators, rtol=1e-12)
        assert not np.any(report.flags & (report.indicators <= cal.mean))


def test_detect_extreme_thresholds(trained):
    _, te, _, det = trained
    report = detect(te.reduced(), det)
    assert len(report) == 66
    assert detect(te, det.with_delta(report.indicators.max() * 1.01)).n_flagged == 0
    assert detect(te, det.with_delta(0.0)).n_flagged == 66
    np.testing.assert_array_equal(report.flags, report.indicators >= report.delta)


def test_detect_errors(trained):
    _, te, _, det = trained
    with pytest.raises(ValueError, match="threshold"):
        detect(te, DriftDetector(det.full_model, det.ensemble))
    with pytest.raises(ValueError, match="l_te=15"):
        detect(te.rows(0, 14), det)
    with pytest.raises(ValueError, match="dimension"):
        detect(Dataset.from_arrays(np.zeros((30, 2))), det)


def test_detect_ignores_responses_and_is_deterministic(trained):
    _, te, _, det = trained
    a, b = detect(te, det), detect(te.reduced(), det)
    assert a.to_csv() == b.to_csv()


def test_window_indicators_match_drifter_test(trained):
    _, te, f, det = trained
    plan = test_plan(te.n, 15)
    fast = window_indicators(te, f, det.ensemble, plan, 2)
    slow = [drifter_test(slice(te, s), f, det.ensemble, 2) for s in plan]
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_detector_json_roundtrip(trained, tmp_path):
    _, te, _, det = trained
    det.save(tmp_path / "det.json")
    back = DriftDetector.load(tmp_path / "det.json")
    payload = json.loads((tmp_path / "det.json").read_text())
    assert payload["schema_version"] == 1
    assert set(payload) >= {"full_model", "segment_models", "plan", "n_ind", "l_te", "delta"}
    assert len(payload["segment_models"]) == 119
    assert back.delta == det.delta
    assert detect(te, back).to_csv() == detect(te, det).to_csv()


def test_report_csv_format(trained):
    _, te, _, det = trained
    lines = detect(te, det).to_csv().splitlines()
    assert lines[0] == "segment_start,segment_end,indicator,flagged"
    assert lines[1].startswith("1,15,")
    assert lines[-1].startswith("976,990,")


def test_knn_segment_models(synthetic_split):
    tr, te = synthetic_split
    trainer = TrainerSpec(ModelKind.KNN, knn_neighbors=3)
    det = build_detector(tr, fit(TrainerSpec(), tr), overlapping_plan(tr.n, 10), trainer, c=5.0)
    report = detect(te, det)
    assert len(report) == 66 and np.all(report.indicators >= 0)
