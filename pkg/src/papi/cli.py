"""Command-line experiment driver.

    papi generate-data --config exp.cfg --out data/
    papi train         --config exp.cfg --out runs/ [--seed 7] [--q 0.3] [--workers 4]
    papi ablate        --config exp.cfg --out runs/
    papi evaluate      --config exp.cfg --checkpoint runs/checkpoint_full_q0.5_s1.npz [--data test.csv]
    papi plot          runs/metrics_full_q0.5_s1.csv --out plots/
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import experiment as ex
from . import metrics as mt
from . import model as mdl
from . import pll_data as data
from .config import ExperimentConfig, parse_config, serialize_config
from .core import VARIANTS
from .errors import PapiError
from .plots import CHARTS, emit_plots

log = logging.getLogger("papi")


def load_experiment_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seeds=(args.seed,))
    if getattr(args, "q", None) is not None:
        if not 0.0 <= args.q <= 1.0:
            raise PapiError(f"--q must lie in [0, 1], got {args.q}")
        cfg = cfg.replace(q=(args.q,))
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")


def _print_table(rows: list[dict]) -> None:
    print(f"{'variant':<14}{'q':>6}{'seeds':>7}{'mean acc':>11}{'std':>9}")
    for r in rows:
        print(f"{r['variant']:<14}{ex.fmt_q(r['q']):>6}{r['n_seeds']:>7}{100 * r['mean_test_acc']:>10.2f}%{100 * r['std_test_acc']:>8.2f}%")


def cmd_generate_data(args) -> int:
    cfg = load_experiment_config(args)
    out = _out_dir(args, cfg)
    for path in ex.generate_data(cfg, out):
        print(path)
    return 0


def _run_and_summarize(cfg: ExperimentConfig, variants, out: Path, workers: int, summary_name: str) -> list[dict]:
    _write_config(cfg, out)
    outcomes = ex.run_grid(cfg, variants, out, workers)
    rows = ex.summarize(outcomes)
    (out / summary_name).write_text(ex.summary_to_csv(rows), encoding="utf-8", newline="")
    _print_table(rows)
    return rows


def cmd_train(args) -> int:
    cfg = load_experiment_config(args)
    _run_and_summarize(cfg, cfg.variants, _out_dir(args, cfg), args.workers, "summary.csv")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_experiment_config(args)
    out = _out_dir(args, cfg)
    rows = _run_and_summarize(cfg, VARIANTS, out, args.workers, "summary.csv")
    order = {v: i for i, v in enumerate(VARIANTS)}
    rows.sort(key=lambda r: (r["q"], order[r["variant"]]))
    (out / "ablation.csv").write_text(ex.summary_to_csv(rows), encoding="utf-8", newline="")
    return 0


EVAL_HEADER = ["test_acc", "proto_acc", "lin_right_proto_wrong", "proto_right_lin_wrong", "intra_sim", "inter_sim"]


def cmd_evaluate(args) -> int:
    cfg = load_experiment_config(args)
    params, prototypes = mdl.load_checkpoint(args.checkpoint)
    if prototypes is None:
        raise PapiError(f"{args.checkpoint}: checkpoint has no prototypes")
    if args.data:
        test = data.load_dataset(args.data, params.dims.num_classes)
    else:
        test = ex.build_run_data(cfg, cfg.seeds[0], cfg.q[0]).test
    tau = cfg.train.tau
    acc = mt.accuracy(mdl.predict_linear(params, test.features), test.true_labels)
    proto = mt.prototype_classifier_accuracy(params, prototypes, tau, test)
    lrpw, prlw = mt.disagreement_counts(params, prototypes, tau, test.features, test.true_labels)
    sim = mt.intra_inter_similarity(params, test, cfg.train.sim_pairs, seed=cfg.seeds[0])
    values = [acc, proto, lrpw, prlw, sim.intra, sim.inter]
    for name, v in zip(EVAL_HEADER, values):
        print(f"{name:<24}{v}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "evaluation.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVAL_HEADER)
            w.writerow([repr(v) if isinstance(v, float) else v for v in values])
    return 0


def cmd_plot(args) -> int:
    charts = CHARTS
    if args.columns:
        charts = {"custom": tuple(c.strip() for c in args.columns.split(",") if c.strip())}
    out = Path(args.out or ".")
    for path in args.metrics:
        for svg in emit_plots(path, out, charts):
            print(svg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="papi", description="Partial-label learning with a guided prototypical classifier")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("--config", help="key = value config file (defaults if omitted)")
        p.add_argument("--out", help="output directory (default: out_dir from config)")
        if seeds:
            p.add_argument("--seed", type=int, help="run a single seed instead of the config's seeds")
            p.add_argument("--q", type=float, help="run a single ambiguity level instead of the config's q list")

    p = sub.add_parser("generate-data", help="write partially labelled dataset CSVs")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    for name, func, text in (("train", cmd_train, "train the configured variants"),
                             ("ablate", cmd_ablate, "train full, no_mixup and no_alignment on paired seeds")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--workers", type=int, default=1, help="parallel run processes")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a test set")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="test-set CSV (default: regenerate from config)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render SVG curves from metrics CSVs")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--columns", help="comma-separated columns for a single custom chart")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PapiError, OSError, ValueError) as exc:
        print(f"papi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
