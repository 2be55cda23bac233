"""Detect virtual concept drift in regression models without ground-truth responses.

An ensemble of regressors trained on short overlapping segments of the
training data is compared with the deployed model on unlabeled test windows;
large disagreement with all but the closest segment model signals that the
test covariates lie outside the concepts seen in training.
"""

from drifter.data import (
    Dataset,
    Segment,
    SegmentationPlan,
    load_csv,
    overlapping_plan,
    split_train_test,
    test_plan,
    write_csv,
)
from drifter.detector import (
    DriftDetector,
    DriftReport,
    SegmentEnsemble,
    build_detector,
    calibrate_threshold,
    detect,
    drifter_test,
    drifter_train,
    rmse_star,
)
from drifter.regress import ExternalPredictions, KNNModel, ModelKind, OLSModel, TrainerSpec, fit, predict

__version__ = "0.1.0"
