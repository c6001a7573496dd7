"""Command-line interface.

Exit codes: 0 ok, 1 I/O failure, 2 usage or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from react_ood import theory
from react_ood.core import NumericError, ReactError, percentile
from react_ood.featureio import FeaturePack, load_head, load_pack, save_head, save_pack
from react_ood.metrics import evaluate
from react_ood.rectifier import DEFAULT_PERCENTILE, RectifierConfig, calibrate, rectified_logits
from react_ood.scoring import MahalanobisModel, Method, OdinConfig, fit_mahalanobis, score_pack

SWEEP_PERCENTILES = "10,65,80,85,90,95,99"

log = logging.getLogger("react_ood")


class UsageError(ReactError):
    pass


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _read_scores(path: str) -> np.ndarray:
    """Score CSV: optional ``index,score`` header, score in the last column."""
    values = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                values.append(float(row[-1]))
            except ValueError:
                if lineno == 1:
                    continue
                raise UsageError(f"{path}: non-numeric score in row {lineno}") from None
    return np.array(values)


def _scores_csv(values: np.ndarray) -> str:
    lines = ["index,score"] + [f"{i},{float(v)!r}" for i, v in enumerate(values)]
    return "\n".join(lines) + "\n"


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str) -> np.ndarray:
    """``a:b:n`` -> n evenly spaced points from a to b."""
    try:
        a, b, n = text.split(":")
        grid = np.linspace(float(a), float(b), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:n, got {text!r}") from None
    if grid.size == 0:
        raise argparse.ArgumentTypeError("grid needs at least one point")
    return grid


def _params(text: str) -> dict[str, float]:
    out = {}
    for item in text.split(","):
        if not item.strip():
            continue
        key, sep, value = item.partition("=")
        if not sep or key.strip() not in {"mu", "sigma", "eps", "c"}:
            raise argparse.ArgumentTypeError(f"bad parameter {item!r}; use mu=,sigma=,eps=,c=")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad number in {item!r}") from None
    return out


# --- subcommands ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cfg = calibrate(load_pack(args.id), args.percentile)
    _emit(cfg.to_text(), args.out)
    return 0


def cmd_fit_mahalanobis(args) -> int:
    model = fit_mahalanobis(load_pack(args.id), args.classes)
    save_pack(model.to_pack(), args.out)
    return 0


def cmd_score(args) -> int:
    method = Method(args.method)
    features = load_pack(args.features)
    head = load_head(args.head) if args.head else None
    react_cfg = RectifierConfig.from_text(Path(args.react).read_text()) if args.react else None
    maha = None
    if method is Method.MAHALANOBIS:
        if not args.maha_model:
            raise UsageError("--method mahalanobis requires --maha-model")
        maha = MahalanobisModel.from_pack(load_pack(args.maha_model))
    elif head is None:
        raise UsageError(f"--method {method.value} requires --head")
    odin = OdinConfig(temperature=args.temperature) if method is Method.ODIN else None
    scores = score_pack(
        features,
        head,
        method,
        react_cfg,
        odin=odin,
        mahalanobis=maha,
        react_mahalanobis=args.react_mahalanobis,
    )
    _emit(_scores_csv(scores.values), args.out)
    return 0


def cmd_eval(args) -> int:
    report = evaluate(_read_scores(args.id_scores), _read_scores(args.ood_scores), args.tpr)
    _emit(report.to_text(), args.out)
    return 0


def cmd_sweep(args) -> int:
    id_pack = load_pack(args.id)
    ood_pack = load_pack(args.ood)
    head = load_head(args.head)
    calib = load_pack(args.calibration) if args.calibration else id_pack
    odin = OdinConfig(temperature=args.temperature) if args.method == "odin" else None

    lines = ["percentile,threshold,fpr95,auroc,aupr,id_accuracy"]
    rows: list[tuple[str, RectifierConfig | float]] = [("none", RectifierConfig.disabled())]
    for p in sorted(args.percentiles, reverse=True):
        c = percentile(calib.features, p)
        rows.append((repr(float(p)), RectifierConfig(float(p), c) if c > 0 else c))
    for label, cfg in rows:
        if not isinstance(cfg, RectifierConfig):
            # clipping at <= 0 erases every post-ReLU activation; no usable threshold
            log.warning("percentile %s gives non-positive threshold %r; row left as nan", label, cfg)
            lines.append(f"{label},{cfg!r},nan,nan,nan,nan")
            continue
        s_id = score_pack(id_pack, head, args.method, cfg, odin=odin).values
        s_ood = score_pack(ood_pack, head, args.method, cfg, odin=odin).values
        rep = evaluate(s_id, s_ood, args.tpr)
        if id_pack.labels is not None:
            pred = rectified_logits(id_pack, head, cfg).argmax(axis=1)
            acc = repr(float(np.mean(pred == id_pack.labels)))
        else:
            acc = "nan"
        lines.append(f"{label},{cfg.threshold_c!r},{rep.fpr95!r},{rep.auroc!r},{rep.aupr!r},{acc}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_theory_surface(args) -> int:
    surface = theory.reduction_surface(args.mu, args.c, args.eps, args.sigma)
    _emit(surface.to_csv(), args.out)
    return 0


_THEORY_FUNCS = {
    "id_pre": lambda p: theory.id_mean_pre(p["mu"], p["sigma"]),
    "id_post": lambda p: theory.id_mean_post(p["mu"], p["sigma"], p["c"]),
    "id_reduction": lambda p: theory.id_reduction(p["mu"], p["sigma"], p["c"]),
    "ood_pre": lambda p: theory.ood_mean_pre(theory.EsnParams(p["mu"], p["sigma"], p["eps"])),
    "ood_post": lambda p: theory.ood_mean_post(
        theory.EsnParams(p["mu"], p["sigma"], p["eps"]), p["c"]
    ),
    "ood_reduction": lambda p: theory.ood_reduction(
        theory.EsnParams(p["mu"], p["sigma"], p["eps"]), p["c"]
    ),
}
_THEORY_FUNCS["reduction"] = _THEORY_FUNCS["ood_reduction"]


def cmd_theory_eval(args) -> int:
    params = {"mu": 0.5, "sigma": 1.0, "eps": 0.0, "c": 1.0}
    params.update(args.params)
    value = _THEORY_FUNCS[args.which](params)
    _emit(f"{value!r}\n", args.out)
    return 0


def cmd_synth_experiment(args) -> int:
    from react_ood.experiment import ExperimentConfig, run_synth_experiment
    from react_ood.smallnet import extract_features, save_model

    result = run_synth_experiment(
        ExperimentConfig(seed=args.seed, percentile=args.percentile, epochs=args.epochs)
    )
    result.write_report(args.report)
    if args.export:
        export = Path(args.export)
        export.mkdir(parents=True, exist_ok=True)
        save_model(result.model, export / "model.ckpt")
        save_head(result.model.head(), export / "head.fpk")
        for name, pack in result.packs.items():
            feats = extract_features(result.model, pack.features, tag=name)
            if pack.labels is not None:
                feats = FeaturePack(feats.features, pack.labels, name, pack.n_classes)
            save_pack(feats, export / f"{name}.fpk")
    sys.stdout.write(result.summary())
    return 0


# --- parser -------------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append defaults unless the flag is required or its help already names one."""

    def _get_help_string(self, action):
        if action.required or "(default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(
        prog="react-ood",
        description="Rectified-activation OOD detection toolkit.",
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("calibrate", help="compute the clip threshold from ID features", formatter_class=fmt)
    p.add_argument("--id", required=True, help="ID feature pack (FPK1)")
    p.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE, help="percentile p in (0, 100]")
    p.add_argument("--out", default=None, help="config file to write (default: stdout)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit-mahalanobis", help="fit class means and tied precision", formatter_class=fmt)
    p.add_argument("--id", required=True, help="labelled ID feature pack")
    p.add_argument("--classes", type=int, default=None, help="number of classes (default: from pack)")
    p.add_argument("--out", required=True, help="model pack to write")
    p.set_defaults(func=cmd_fit_mahalanobis)

    p = sub.add_parser("score", help="score a feature pack", formatter_class=fmt)
    p.add_argument("--features", required=True, help="feature pack to score")
    p.add_argument("--head", default=None, help="classifier head pack ((m+1) x K)")
    p.add_argument("--method", required=True, choices=[m.value for m in Method], help="score function")
    p.add_argument("--react", default=None, help="rectifier config from 'calibrate' (default: no clipping)")
    p.add_argument("--temperature", type=float, default=1000.0, help="ODIN temperature")
    p.add_argument("--maha-model", default=None, help="pack from 'fit-mahalanobis'")
    p.add_argument("--react-mahalanobis", action="store_true", help="clip features before Mahalanobis")
    p.add_argument("--out", default=None, help="CSV to write (default: stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="FPR95 / AUROC / AUPR from score CSVs", formatter_class=fmt)
    p.add_argument("--id-scores", required=True, help="ID score CSV (index,score)")
    p.add_argument("--ood-scores", required=True, help="OOD score CSV (index,score)")
    p.add_argument("--tpr", type=float, default=0.95, help="target true-positive rate on ID")
    p.add_argument("--out", default=None, help="file to write (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="metrics across clip percentiles", formatter_class=fmt)
    p.add_argument("--id", required=True, help="ID feature pack (labels enable the accuracy column)")
    p.add_argument("--ood", required=True, help="OOD feature pack")
    p.add_argument("--head", required=True, help="classifier head pack")
    p.add_argument("--calibration", default=None, help="pack to calibrate on (default: --id)")
    p.add_argument("--percentiles", type=_float_list, default=SWEEP_PERCENTILES, help="comma-separated percentiles")
    p.add_argument("--method", choices=["msp", "odin", "energy"], default="energy", help="score function")
    p.add_argument("--temperature", type=float, default=1000.0, help="ODIN temperature")
    p.add_argument("--tpr", type=float, default=0.95, help="target true-positive rate on ID")
    p.add_argument("--out", default=None, help="file to write (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("theory", help="closed-form activation model", formatter_class=fmt)
    tsub = p.add_subparsers(dest="theory_command", required=True, metavar="MODE")
    t = tsub.add_parser("surface", help="OOD reduction over an (eps, sigma) grid", formatter_class=fmt)
    t.add_argument("--mu", type=float, default=0.5, help="activation mode mu")
    t.add_argument("--c", type=float, default=1.0, help="clip threshold")
    t.add_argument("--eps", type=_grid, default="-0.5:0:11", help="a:b:n")
    t.add_argument("--sigma", type=_grid, default="0.25:2:11", help="a:b:n")
    t.add_argument("--out", default=None, help="file to write (default: stdout)")
    t.set_defaults(func=cmd_theory_surface)
    t = tsub.add_parser("eval", help="evaluate one expectation", formatter_class=fmt)
    t.add_argument("--which", required=True, choices=sorted(_THEORY_FUNCS), help="expectation to evaluate")
    t.add_argument(
        "--params", type=_params, default={}, help="mu=..,sigma=..,eps=..,c=.. (defaults 0.5,1,0,1; c may be inf)"
    )
    t.add_argument("--out", default=None, help="file to write (default: stdout)")
    t.set_defaults(func=cmd_theory_eval)

    p = sub.add_parser("synth-experiment", help="train on synthetic blobs and evaluate ReAct", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--report", required=True, help="directory for summary.txt and unit CSVs")
    p.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE, help="clip percentile p")
    p.add_argument("--epochs", type=int, default=30, help="training epochs")
    p.add_argument("--export", default=None, help="also write model, head and feature packs here")
    p.set_defaults(func=cmd_synth_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "react_mahalanobis", False) and args.method != Method.MAHALANOBIS.value:
        parser.error("--react-mahalanobis only applies to --method mahalanobis")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"react-ood: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ReactError, ValueError, KeyError) as exc:
        print(f"react-ood: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"react-ood: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
