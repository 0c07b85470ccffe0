"""Dataset construction and multi-run orchestration shared by the CLI and the acceptance tests."""
from __future__ import annotations

import csv
import io
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import core
from . import model as mdl
from . import pll_data as data
from .config import ExperimentConfig
from .rng import derive_seed

log = logging.getLogger(__name__)


def fmt_q(q: float) -> str:
    return format(q, "g")


@dataclass
class RunData:
    train: data.PLLDataset
    test: data.PLLDataset
    clean_train: data.PLLDataset | None


def clean_splits(cfg: ExperimentConfig, seed: int) -> tuple[data.PLLDataset, data.PLLDataset]:
    train = data.make_blobs(cfg.num_classes, cfg.per_class, cfg.dim, cfg.separation, derive_seed(seed, "data", "train"))
    test = data.make_blobs(cfg.num_classes, cfg.test_per_class, cfg.dim, cfg.separation, derive_seed(seed, "data", "test"))
    return train, test


def partial_labels(cfg: ExperimentConfig, clean: data.PLLDataset, seed: int, q: float) -> data.PLLDataset:
    # the candidate stream does not depend on q, so candidate sets are nested across q
    cand_seed = derive_seed(seed, "data", "candidates")
    if cfg.generator == "uniform":
        return data.uniform_candidates(clean, q, cand_seed)
    scores = data.pretrain_oracle(clean, cfg.oracle_epochs, derive_seed(seed, "data", "oracle"),
                                  hidden=cfg.train.encoder_hidden, enc_dim=cfg.train.enc_dim)
    return data.instance_dependent_candidates(clean, scores, cand_seed)


def build_run_data(cfg: ExperimentConfig, seed: int, q: float) -> RunData:
    if cfg.train_csv:
        train = data.load_dataset(cfg.train_csv)
        if not cfg.test_csv:
            raise ValueError("train_csv given without test_csv")
        test = data.load_dataset(cfg.test_csv, train.num_classes)
        return RunData(train, test, None)
    clean, test = clean_splits(cfg, seed)
    return RunData(partial_labels(cfg, clean, seed, q), test, clean)


def data_filename(cfg: ExperimentConfig, seed: int, q: float) -> str:
    if cfg.generator == "instance_dependent":
        return f"data_instance_dependent_s{seed}.csv"
    return f"data_uniform_q{fmt_q(q)}_s{seed}.csv"


def generate_data(cfg: ExperimentConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    qs = cfg.q if cfg.generator == "uniform" else (None,)
    for seed in cfg.seeds:
        clean, test = clean_splits(cfg, seed)
        for q in qs:
            path = out / data_filename(cfg, seed, q)
            data.save_dataset(partial_labels(cfg, clean, seed, q), path)
            written.append(path)
        path = out / f"test_s{seed}.csv"
        data.save_dataset(test, path)
        written.append(path)
    return written


# ----------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class RunKey:
    variant: str
    q: float
    seed: int

    @property
    def tag(self) -> str:
        return f"{self.variant}_q{fmt_q(self.q)}_s{self.seed}"


@dataclass
class RunOutcome:
    key: RunKey
    metrics: list[core.EpochMetrics]
    final_test_accuracy: float


def run_one(cfg: ExperimentConfig, key: RunKey, out_dir=None) -> RunOutcome:
    rd = build_run_data(cfg, key.seed, key.q)
    result = core.train(rd.train, rd.test, cfg.train_config(key.seed, key.variant))
    if out_dir is not None:
        out = Path(out_dir)
        core.write_metrics_csv(result.metrics, out / f"metrics_{key.tag}.csv")
        mdl.save_checkpoint(out / f"checkpoint_{key.tag}.npz", result.params, result.prototypes)
    final = result.metrics[-1].test_accuracy if result.metrics else float("nan")
    log.info("run %s: final test accuracy %.4f", key.tag, final)
    return RunOutcome(key, result.metrics, final)


def _run_star(args):
    return run_one(*args)


def run_grid(cfg: ExperimentConfig, variants, out_dir=None, workers: int = 1) -> list[RunOutcome]:
    """All (variant, q, seed) runs; each run owns its state and output files."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    qs = cfg.q if not cfg.train_csv else (cfg.q[0],)
    keys = [RunKey(v, q, s) for v in variants for q in qs for s in cfg.seeds]
    jobs = [(cfg, k, out_dir) for k in keys]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_star, jobs))
    return [_run_star(j) for j in jobs]


SUMMARY_HEADER = ["variant", "q", "n_seeds", "mean_test_acc", "std_test_acc", "per_seed_test_acc"]


def summarize(outcomes: list[RunOutcome]) -> list[dict]:
    """Mean and sample standard deviation (0 for a single seed) of final test accuracy."""
    groups: dict[tuple[str, float], list[RunOutcome]] = {}
    for o in outcomes:
        groups.setdefault((o.key.variant, o.key.q), []).append(o)
    rows = []
    for (variant, q), runs in groups.items():
        accs = [r.final_test_accuracy for r in sorted(runs, key=lambda r: r.key.seed)]
        rows.append({
            "variant": variant,
            "q": q,
            "n_seeds": len(accs),
            "mean_test_acc": statistics.fmean(accs),
            "std_test_acc": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "per_seed_test_acc": accs,
        })
    return rows


def summary_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for r in rows:
        writer.writerow([
            r["variant"], fmt_q(r["q"]), r["n_seeds"], repr(r["mean_test_acc"]), repr(r["std_test_acc"]),
            ";".join(repr(a) for a in r["per_seed_test_acc"]),
        ])
    return buf.getvalue()


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["q"] = float(r["q"])
        r["n_seeds"] = int(r["n_seeds"])
        r["mean_test_acc"] = float(r["mean_test_acc"])
        r["std_test_acc"] = float(r["std_test_acc"])
        r["per_seed_test_acc"] = [float(a) for a in r["per_seed_test_acc"].split(";")]
    return rows
