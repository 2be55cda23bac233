"""Command-line interface.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 drift flagged
(``detect`` only).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from drifter import synth
from drifter._atomic import atomic_write_text
from drifter.data import Dataset, Segment, load_csv, overlapping_plan, split_train_test
from drifter.detector import DEFAULT_N_IND, DriftDetector, build_detector, detect
from drifter.evaluation import detrend, evaluate, verify_theorem
from drifter.regress import ExternalPredictions, ModelKind, TrainerSpec, fit

log = logging.getLogger("drifter")

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DRIFT = 3


class UsageError(Exception):
    pass


@contextmanager
def _timed(args, label):
    t0 = time.perf_counter()
    yield
    if getattr(args, "timing", False):
        print(f"[timing] {label}: {time.perf_counter() - t0:.3f}s", file=sys.stderr)


def _drift_interval(text: str) -> Segment:
    try:
        a, b = text.split(":")
        return Segment(int(a), int(b))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:END, got {text!r}") from None


def _add_model_flags(p):
    p.add_argument("--full-model", choices=[k.value for k in ModelKind], default="ols",
                   help="family of the deployed model fitted on the training data")
    p.add_argument("--segment-model", choices=[k.value for k in ModelKind], default="ols")
    p.add_argument("--knn-neighbors", type=int, default=5)
    p.add_argument("--ridge", type=float, default=1e-8, help="ridge term used when a Gram matrix is singular")


def _add_drifter_flags(p):
    p.add_argument("--k", type=int, help="segment count parameter (2k-1 overlapping segments)")
    p.add_argument("--l-tr", type=int, help="training segment length; sets k = floor(n_tr / l_tr)")
    p.add_argument("--l-te", type=int, default=15, help="test window length")
    p.add_argument("--n-ind", type=int, help="rank of the disagreement used as indicator (default 2, "
                   "capped at the ensemble size)")
    p.add_argument("--c", type=float, default=5.0, help="threshold multiplier: delta = mean + c * sd")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="drifter", description="Detect virtual concept drift in regression "
                                     "without ground-truth responses.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag values; explicit flags take precedence")
    common.add_argument("--timing", action="store_true", help="report elapsed time per phase on stderr")

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--h", type=float, default=150.0, help="AR(1) correlation length")
    p.add_argument("--amp", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.3, help="response noise standard deviation")
    p.add_argument("--drift", type=_drift_interval, help="drift interval START:END (1-based, inclusive)")
    p.add_argument("--drift-amp", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="synth.csv")
    subs["synth"] = p

    p = sub.add_parser("train", parents=[common], help="fit segment models and calibrate the threshold")
    p.add_argument("-i", "--input")
    p.add_argument("-y", "--response", default="y")
    _add_drifter_flags(p)
    _add_model_flags(p)
    p.add_argument("--calibration-length", type=int,
                   help="window length for threshold calibration (default: --l-te)")
    p.add_argument("--full-predictions", help="CSV with one column of deployed-model predictions per training row")
    p.add_argument("-o", "--output", default="detector.json")
    subs["train"] = p

    p = sub.add_parser("detect", parents=[common], help="flag drifting windows in unlabeled data")
    p.add_argument("-d", "--detector")
    p.add_argument("-i", "--input")
    p.add_argument("-y", "--response", default="y", help="response column to ignore if present")
    p.add_argument("--full-predictions", help="CSV with one column of deployed-model predictions per test row")
    p.add_argument("-o", "--output", default="report.csv")
    subs["detect"] = p

    p = sub.add_parser("eval", parents=[common], help="score detection against ground-truth errors")
    p.add_argument("-i", "--input", help="single CSV split into train/test halves")
    p.add_argument("--split", type=float, default=0.5, help="training fraction when using --input")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("-y", "--response", default="y")
    _add_drifter_flags(p)
    _add_model_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--multiplier", type=float, default=2.0, help="sigma_emp = multiplier * CV RMSE")
    p.add_argument("--detrend", action="store_true", help="rescale test responses to the training mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="eval.json")
    subs["eval"] = p

    p = sub.add_parser("theorem", parents=[common], help="Monte-Carlo check of the OLS error identity")
    p.add_argument("--n", type=int)
    p.add_argument("--nprime", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--sigma-y", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--n-eval", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="also write the report JSON here")
    subs["theorem"] = p
    return parser, subs


def parse_args(argv=None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        defaults = {}
        for key, value in config.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                sp.error(f"unknown config key {key!r}")
            action = next(a for a in sp._actions if a.dest == dest)
            if action.type is not None and isinstance(value, str):
                value = action.type(value)
            defaults[dest] = value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    _validate(args, subs[args.command])
    return args


def _validate(args, sp) -> None:
    required = {
        "synth": ["n"],
        "train": ["input"],
        "detect": ["detector", "input"],
        "eval": [],
        "theorem": ["n", "nprime", "m"],
    }[args.command]
    missing = [r for r in required if getattr(args, r) is None]
    if missing:
        sp.error("missing required flag(s): " + ", ".join("--" + r.replace("_", "-") for r in missing))
    if args.command in ("train", "eval") and (args.k is None) == (args.l_tr is None):
        sp.error("exactly one of --k and --l-tr is required")
    if args.command == "eval" and not (args.input or (args.train and args.test)):
        sp.error("eval needs --input, or both --train and --test")


def _trainer(kind: str, args) -> TrainerSpec:
    return TrainerSpec(ModelKind(kind), args.knn_neighbors, args.ridge)


def _k_from(args, n_tr: int) -> int:
    if args.k is not None:
        return args.k
    if args.l_tr < 2:
        raise UsageError("--l-tr must be at least 2")
    return max(1, n_tr // args.l_tr)


def _n_ind(args, ensemble_size: int) -> int:
    if args.n_ind is not None:
        return args.n_ind
    if ensemble_size < DEFAULT_N_IND:
        print(f"warning: only {ensemble_size} segment model(s); using n_ind={ensemble_size}", file=sys.stderr)
        return ensemble_size
    return DEFAULT_N_IND


def _read_predictions(path, n: int) -> np.ndarray:
    d = load_csv(path)
    if d.m != 1 or d.n != n:
        raise ValueError(f"{path}: expected one prediction column with {n} rows, got {d.m} columns x {d.n} rows")
    return d.X[:, 0]


def _load_unlabeled(path, response) -> Dataset:
    if response is None:
        return load_csv(path)
    with open(path) as fh:
        header = [h.strip() for h in fh.readline().split(",")]
    return load_csv(path, response if response in header else None).reduced()


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(n=args.n, m=args.m, h=args.h, amp=args.amp, sigma_n=args.noise,
                           drift_interval=args.drift, drift_amp=args.drift_amp, seed=args.seed)
    with _timed(args, "synth"):
        synth.write(spec, args.output)
    log.info("wrote %s (%d x %d)", args.output, spec.n, spec.m)
    return 0


def cmd_train(args) -> int:
    d_tr = load_csv(args.input, args.response)
    if args.full_predictions:
        full = ExternalPredictions(d_tr.X, _read_predictions(args.full_predictions, d_tr.n))
    else:
        with _timed(args, "full model"):
            full = fit(_trainer(args.full_model, args), d_tr)
    k = _k_from(args, d_tr.n)
    plan = overlapping_plan(d_tr.n, k)
    with _timed(args, f"train {len(plan)} segment models"):
        det = build_detector(d_tr, full, plan, _trainer(args.segment_model, args), _n_ind(args, len(plan)),
                             args.calibration_length or args.l_te, args.c)
    det = DriftDetector(det.full_model, det.ensemble, det.n_ind, det.delta, args.l_te, det.calibration)
    det.save(args.output)
    print(f"trained {len(plan)} segment models (k={k}, l_tr={plan.nominal_length}); "
          f"delta={det.delta:.6g} (c={args.c:g}); wrote {args.output}")
    return 0


def cmd_detect(args) -> int:
    det = DriftDetector.load(args.detector)
    d_te = _load_unlabeled(args.input, args.response)
    if d_te.m != det.m:
        raise ValueError(f"dimension mismatch: detector expects {det.m} covariates, {args.input} has {d_te.m}")
    full = None
    if args.full_predictions:
        full = ExternalPredictions(d_te.X, _read_predictions(args.full_predictions, d_te.n))
    elif det.full_model is None:
        raise UsageError("detector uses an external full model; pass --full-predictions")
    with _timed(args, "detect"):
        report = detect(d_te, det, full)
    report.write_csv(args.output)
    print(f"flagged {report.n_flagged}/{len(report)} segments (delta={report.delta:.6g}); wrote {args.output}")
    return EXIT_DRIFT if report.n_flagged else 0


def cmd_eval(args) -> int:
    if args.input:
        d_tr, d_te = split_train_test(load_csv(args.input, args.response), args.split)
    else:
        d_tr, d_te = load_csv(args.train, args.response), load_csv(args.test, args.response)
    if args.detrend:
        d_te = detrend(d_tr, d_te)
    k = _k_from(args, d_tr.n)
    with _timed(args, "eval"):
        result = evaluate(d_tr, d_te, k, full_trainer=_trainer(args.full_model, args),
                          segment_trainer=_trainer(args.segment_model, args), n_ind=_n_ind(args, 2 * k - 1),
                          l_te=args.l_te, c=args.c, folds=args.folds, multiplier=args.multiplier,
                          seed=args.seed)
    paths = result.write(args.output)
    s = result.summary()
    conf = s["confusion"]
    f1_txt = "undefined" if s["f1"] is None else f"{s['f1']:.3f}"
    opt_txt = "undefined" if s["f1_opt"] is None else f"{s['f1_opt']:.3f} (c_opt={s['c_opt']:.3f})"
    print(f"segments={s['segments']} TP={conf['tp']} FP={conf['fp']} TN={conf['tn']} FN={conf['fn']} "
          f"F1@c={f1_txt} best F1={opt_txt}; wrote {', '.join(paths)}")
    return 0


def cmd_theorem(args) -> int:
    with _timed(args, "theorem"):
        report = verify_theorem(args.n, args.nprime, args.m, args.sigma_y, args.n_eval, args.trials, args.seed)
    text = json.dumps(report.to_dict(), indent=1)
    if args.output:
        atomic_write_text(args.output, text + "\n")
    print(text)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval,
            "theorem": cmd_theorem}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"drifter {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # surfaced as exit code 1 with context
        log.debug("failure", exc_info=True)
        print(f"drifter {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
