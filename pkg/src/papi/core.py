"""The partial-label objective (prototype alignment + self-teaching classification)
and its mini-batch training loop."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from . import metrics as mt
from . import model as mdl
from . import numerics as nx
from .errors import DegenerateVectorError, DistributionError, PapiError
from .pll_data import AugmentationSpec, PLLDataset, augment, mixup_batch
from .rng import make_rng

log = logging.getLogger(__name__)

Variant = Literal["full", "no_mixup", "no_alignment"]
VARIANTS: tuple[str, ...] = ("full", "no_mixup", "no_alignment")


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.1
    lambda_ema: float = 0.9
    gamma_proto: float = 0.99
    mixup_alpha: float = 4.0
    batch_size: int = 64
    epochs: int = 200
    warmup_epochs: int = 5
    ramp_epochs: int = 20
    align_weight_max: float = 1.0
    learning_rate: float = 0.05
    lr_schedule: Literal["cosine", "constant"] = "cosine"
    weight_decay: float = 1e-4
    seed: int = 0
    variant: Variant = "full"
    composition: Literal["S+W", "2xS", "2xW"] = "S+W"
    weak_noise_sigma: float = 0.1
    strong_noise_sigma: float = 0.5
    strong_dropout_rate: float = 0.2
    encoder_hidden: tuple[int, ...] = (64,)
    enc_dim: int = 64
    proj_hidden: int = 64
    proj_dim: int = 16
    sim_pairs: int = 20_000

    def __post_init__(self):
        checks = [
            (self.tau > 0, "tau", "must be > 0"),
            (0.0 <= self.lambda_ema <= 1.0, "lambda_ema", "must lie in [0, 1]"),
            (0.0 <= self.gamma_proto <= 1.0, "gamma_proto", "must lie in [0, 1]"),
            (self.mixup_alpha > 0, "mixup_alpha", "must be > 0"),
            (self.batch_size >= 2, "batch_size", "must be >= 2"),
            (self.epochs >= 0, "epochs", "must be >= 0"),
            (self.warmup_epochs >= 0, "warmup_epochs", "must be >= 0"),
            (self.ramp_epochs >= 0, "ramp_epochs", "must be >= 0"),
            (self.align_weight_max >= 0, "align_weight_max", "must be >= 0"),
            (self.learning_rate >= 0, "learning_rate", "must be >= 0"),
            (self.lr_schedule in ("cosine", "constant"), "lr_schedule", "must be cosine or constant"),
            (self.weight_decay >= 0, "weight_decay", "must be >= 0"),
            (self.seed >= 0, "seed", "must be >= 0"),
            (self.variant in VARIANTS, "variant", f"must be one of {VARIANTS}"),
            (self.sim_pairs >= 1, "sim_pairs", "must be >= 1"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ValueError(f"{key} {msg} (got {getattr(self, key)!r})")
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        self.augmentation  # validates the augmentation fields

    @property
    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec(self.weak_noise_sigma, self.strong_noise_sigma, self.strong_dropout_rate, self.composition)

    def model_dims(self, input_dim: int, num_classes: int) -> mdl.ModelDims:
        return mdl.ModelDims(input_dim, num_classes, self.encoder_hidden, self.enc_dim, self.proj_hidden, self.proj_dim)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ----------------------------------------------------------------------------
# per-sample building blocks

def prototypical_similarity(logits) -> np.ndarray:
    return nx.softmax_rows(logits)


def disambiguate(r, candidates) -> np.ndarray:
    """Classifier probabilities renormalised onto the candidate set.

    ``r`` is (K,) or (B, K); ``candidates`` is a boolean mask of the same shape
    (or, for a single row, an iterable of class indices). Rows whose candidate
    mass is below EPS_PROB fall back to uniform over the candidates.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 1 and not (isinstance(candidates, np.ndarray) and candidates.dtype == bool):
        idx = list(candidates)
        mask = np.zeros(r.shape, dtype=bool)
        mask[idx] = True
    else:
        mask = np.asarray(candidates, dtype=bool)
    if mask.shape != r.shape:
        raise DistributionError(f"candidate mask {mask.shape} does not match predictions {r.shape}")
    if not mask.any(axis=-1).all():
        raise DistributionError("empty candidate set")
    masked = np.where(mask, r, 0.0)
    mass = masked.sum(axis=-1, keepdims=True)
    uniform = mask / mask.sum(axis=-1, keepdims=True)
    safe = np.where(mass < nx.EPS_PROB, 1.0, mass)
    return np.where(mass < nx.EPS_PROB, uniform, masked / safe)


def update_pseudo_target(p_old, u, lambda_ema: float) -> np.ndarray:
    p_old = np.asarray(p_old, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if ((u > 0) & (p_old == 0)).any():
        raise DistributionError("new target puts mass outside the current support")
    return lambda_ema * p_old + (1.0 - lambda_ema) * u


def alignment_loss(p, s1, s2) -> float:
    return float(nx.kl_divergence_rows(p, s1) + nx.kl_divergence_rows(p, s2))


def mixed_alignment_loss(p_i, p_partner, s_hat1, s_hat2, mix_coeff: float) -> float:
    if not 0.0 <= mix_coeff <= 1.0:
        raise ValueError(f"mix coefficient must lie in [0, 1], got {mix_coeff}")
    return mix_coeff * alignment_loss(p_i, s_hat1, s_hat2) + (1.0 - mix_coeff) * alignment_loss(p_partner, s_hat1, s_hat2)


def classification_loss(p, r) -> float:
    return nx.cross_entropy(p, r)


def align_weight(t: int, config: TrainConfig) -> float:
    """Zero during warm-up, then a linear ramp to ``align_weight_max``."""
    if t < config.warmup_epochs:
        return 0.0
    if config.ramp_epochs == 0:
        return config.align_weight_max
    return config.align_weight_max * min(1.0, (t - config.warmup_epochs) / config.ramp_epochs)


def total_loss(cla: float, ali: float, w: float) -> float:
    return cla + w * ali


def pseudo_labels(p) -> np.ndarray:
    return np.asarray(p).argmax(axis=1)


def update_prototypes(prototypes: mdl.Prototypes, z1, z2, labels, gamma_proto: float) -> mdl.Prototypes:
    """Sequential EMA of unit embeddings into their pseudo-class prototype.

    Samples are visited in batch order, view 1 then view 2 for each sample;
    the prototype is renormalised after every single update.
    """
    c = prototypes.matrix.copy()
    if gamma_proto == 1.0:
        return mdl.Prototypes(c)
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    g, one_minus = gamma_proto, 1.0 - gamma_proto
    rows = c.tolist()
    for i, k in enumerate(np.asarray(labels).tolist()):
        for z in (z1[i], z2[i]):
            new = [g * a + one_minus * b for a, b in zip(rows[k], z.tolist())]
            norm = math.sqrt(sum(v * v for v in new))
            if norm < nx.EPS_NORM:
                raise DegenerateVectorError(f"prototype {k} collapsed to zero norm")
            rows[k] = [v / norm for v in new]
    return mdl.Prototypes(np.array(rows))


# ----------------------------------------------------------------------------
# batch objective with manual backward

@dataclass
class BatchForward:
    batch: int
    mixed: bool
    v: np.ndarray
    z: np.ndarray
    r: np.ndarray
    enc_cache: list
    proj_cache: tuple
    cls_cache: nx.LinearCache

    @property
    def z1(self) -> np.ndarray:
        return self.z[: self.batch]

    @property
    def z2(self) -> np.ndarray:
        return self.z[self.batch: 2 * self.batch]


def batch_forward(params: mdl.ModelParams, view1, view2, mixed1=None, mixed2=None) -> BatchForward:
    """One shared pass over all views stacked row-wise: [view1; view2; mixed1; mixed2]."""
    b = np.shape(view1)[0]
    views = [view1, view2]
    if mixed1 is not None:
        views += [mixed1, mixed2]
    v, enc_cache = mdl.encode(params, np.vstack(views))
    z, proj_cache = mdl.project(params, v)
    r, cls_cache = mdl.classify(params, v[:b])
    return BatchForward(b, mixed1 is not None, v, z, r, enc_cache, proj_cache, cls_cache)


@dataclass
class BatchLoss:
    total: float
    cla: float
    ali: float
    cla_rows: np.ndarray
    ali_rows: np.ndarray | None
    s1: np.ndarray | None
    s2: np.ndarray | None
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def batch_loss(
    params: mdl.ModelParams,
    prototypes: mdl.Prototypes,
    fwd: BatchForward,
    p,
    *,
    tau: float,
    align_w: float,
    variant: str = "full",
    partner=None,
    mix_coeff: float = 1.0,
    with_grads: bool = True,
) -> BatchLoss:
    """Mean over the batch of ``CE(p, r) + align_w * alignment``; ``p`` is a constant.

    The alignment term uses the mixed views when ``fwd`` carries them (mixup
    with ``partner``/``mix_coeff``) and the plain views otherwise.
    """
    b = fwd.batch
    p = np.asarray(p, dtype=np.float64)
    grads: dict[str, np.ndarray] = {}
    dv = np.zeros_like(fwd.v)

    cla_rows = nx.cross_entropy_rows(p, fwd.r)
    if with_grads:
        dr = nx.neg_log_grad(p, fwd.r) / b
        dv[:b] = mdl.classify_backward(fwd.cls_cache, fwd.r, dr, grads)

    ali_rows = s1 = s2 = None
    ali = 0.0
    if variant != "no_alignment":
        if fwd.mixed:
            if partner is None:
                raise ValueError("mixed views given without a partner permutation")
            lo = 2 * b
            p_partner, phi = p[np.asarray(partner)], float(mix_coeff)
        else:
            lo = 0
            p_partner, phi = p, 1.0
        zs = fwd.z[lo: lo + 2 * b]
        s = prototypical_similarity(mdl.prototype_logits(zs, prototypes, tau))
        s1, s2 = s[:b], s[b:]
        ali_rows = phi * (nx.kl_divergence_rows(p, s1) + nx.kl_divergence_rows(p, s2))
        if phi < 1.0:
            ali_rows = ali_rows + (1.0 - phi) * (
                nx.kl_divergence_rows(p_partner, s1) + nx.kl_divergence_rows(p_partner, s2)
            )
        ali = float(ali_rows.mean())
        if with_grads and align_w > 0:
            pt, ppt = np.vstack([p, p]), np.vstack([p_partner, p_partner])
            ds = phi * nx.neg_log_grad(pt, s)
            if phi < 1.0:
                ds = ds + (1.0 - phi) * nx.neg_log_grad(ppt, s)
            ds *= align_w / b
            dlogits = nx.softmax_rows_backward(s, ds)
            dz = np.zeros_like(fwd.z)
            dz[lo: lo + 2 * b] = dlogits @ prototypes.matrix / tau
            dv += mdl.project_backward(fwd.proj_cache, dz, grads)

    if with_grads:
        mdl.encode_backward(params, fwd.enc_cache, dv, grads)
        for name, w in params.arrays.items():
            if name not in grads:
                grads[name] = np.zeros_like(w)

    cla = float(cla_rows.mean())
    return BatchLoss(total_loss(cla, ali, align_w), cla, ali, cla_rows, ali_rows, s1, s2, grads)


def objective(
    params: mdl.ModelParams,
    prototypes: mdl.Prototypes,
    view1,
    view2,
    p,
    *,
    tau: float,
    align_w: float,
    variant: str = "full",
    mixed1=None,
    mixed2=None,
    partner=None,
    mix_coeff: float = 1.0,
) -> BatchLoss:
    """Full objective for fixed inputs and frozen targets (used for gradient checks)."""
    fwd = batch_forward(params, view1, view2, mixed1, mixed2)
    return batch_loss(params, prototypes, fwd, p, tau=tau, align_w=align_w, variant=variant,
                      partner=partner, mix_coeff=mix_coeff)


# ----------------------------------------------------------------------------
# training loop

@dataclass
class PseudoTarget:
    p: np.ndarray  # (N, K)

    @classmethod
    def uniform(cls, candidate_mask: np.ndarray) -> "PseudoTarget":
        m = candidate_mask.astype(np.float64)
        return cls(m / m.sum(axis=1, keepdims=True))


@dataclass
class EpochMetrics:
    epoch: int
    mean_cla_loss: float
    mean_ali_loss: float
    train_accuracy: float
    test_accuracy: float
    proto_accuracy: float
    disambiguation_purity: float
    linear_right_proto_wrong: int
    proto_right_linear_wrong: int
    intra_class_sim: float
    inter_class_sim: float


METRICS_HEADER = [
    "epoch", "cla_loss", "ali_loss", "train_acc", "test_acc", "proto_acc", "disamb_purity",
    "lin_right_proto_wrong", "proto_right_lin_wrong", "intra_sim", "inter_sim",
]


@dataclass
class BatchState:
    """Snapshot handed to a training observer after each optimiser step."""

    epoch: int
    batch: int
    indices: np.ndarray
    pseudo_target: np.ndarray  # rows for ``indices`` after the update
    candidate_mask: np.ndarray
    prototypes: np.ndarray
    loss: BatchLoss


@dataclass
class TrainResult:
    params: mdl.ModelParams
    prototypes: mdl.Prototypes
    pseudo_target: PseudoTarget
    metrics: list[EpochMetrics]
    initial_params: mdl.ModelParams | None = None


def learning_rate_at(epoch: int, config: TrainConfig) -> float:
    if config.lr_schedule == "constant" or config.epochs == 0:
        return config.learning_rate
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, order.size, batch_size)]
    # a trailing singleton cannot be mixed; fold it into the previous batch
    if len(chunks) > 1 and chunks[-1].size < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def evaluate_epoch(
    epoch: int,
    params: mdl.ModelParams,
    prototypes: mdl.Prototypes,
    pseudo: PseudoTarget,
    train_set: PLLDataset,
    test_set: PLLDataset | None,
    config: TrainConfig,
    cla_loss: float,
    ali_loss: float,
) -> EpochMetrics:
    train_acc = mt.accuracy(mdl.predict_linear(params, train_set.features), train_set.true_labels)
    purity = mt.disambiguation_purity(pseudo.p, train_set.true_labels)
    nan = float("nan")
    if test_set is None or len(test_set) == 0:
        return EpochMetrics(epoch, cla_loss, ali_loss, train_acc, nan, nan, purity, 0, 0, nan, nan)
    v, _ = mdl.encode(params, test_set.features)
    r, _ = mdl.classify(params, v)
    z, _ = mdl.project(params, v)
    lin_pred = r.argmax(axis=1)
    proto_pred = mt.prototype_predictions(z, prototypes, config.tau)
    y = test_set.true_labels
    lrpw, prlw = mt.count_disagreements(lin_pred, proto_pred, y)
    if np.unique(y).size >= 2:
        sim = mt.embedding_similarity(z, y, config.sim_pairs, seed=config.seed)
        intra, inter = sim.intra, sim.inter
    else:
        intra = inter = nan
    return EpochMetrics(
        epoch, cla_loss, ali_loss, train_acc, mt.accuracy(lin_pred, y), mt.accuracy(proto_pred, y),
        purity, lrpw, prlw, intra, inter,
    )


class TrainingError(PapiError, RuntimeError):
    pass


def train(
    dataset: PLLDataset,
    test_set: PLLDataset | None,
    config: TrainConfig,
    observer: Callable[[BatchState], None] | None = None,
) -> TrainResult:
    """Mini-batch training; returns final state and one EpochMetrics per epoch.

    Per batch: forward both augmented views (and, with mixup, the augmented
    views of the mixed inputs), refresh the batch's pseudo-targets from the
    classifier, take an SGD step on the combined loss, then move each
    pseudo-class prototype towards the batch embeddings.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    dims = config.model_dims(dataset.feature_dim, dataset.num_classes)
    params = mdl.init_params(dims, config.seed)
    initial = params.copy()
    prototypes = mdl.init_prototypes(dataset.num_classes, config.proj_dim, config.seed)
    pseudo = PseudoTarget.uniform(dataset.candidate_mask)
    spec = config.augmentation
    mode1, mode2 = spec.view_modes()
    use_mixup = config.variant == "full"

    shuffle_rng = make_rng(config.seed, "shuffle")
    aug_rng = make_rng(config.seed, "augment")
    aug_mix_rng = make_rng(config.seed, "augment-mixed")
    mix_rng = make_rng(config.seed, "mixup")

    x_all = dataset.features
    mask_all = dataset.candidate_mask
    history: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        lr = learning_rate_at(epoch, config)
        w = align_weight(epoch, config)
        cla_sum = ali_sum = 0.0
        for b_idx, idx in enumerate(_batches(shuffle_rng.permutation(len(dataset)), config.batch_size)):
            try:
                xb = x_all[idx]
                x1 = augment(xb, mode1, spec, aug_rng)
                x2 = augment(xb, mode2, spec, aug_rng)
                xm1 = xm2 = partner = None
                phi = 1.0
                if use_mixup:
                    mix = mixup_batch(xb, config.mixup_alpha, mix_rng)
                    xm1 = augment(mix.mixed_features, mode1, spec, aug_mix_rng)
                    xm2 = augment(mix.mixed_features, mode2, spec, aug_mix_rng)
                    partner, phi = mix.partner_index, mix.mix_coeff
                fwd = batch_forward(params, x1, x2, xm1, xm2)

                u = disambiguate(fwd.r, mask_all[idx])
                p_batch = update_pseudo_target(pseudo.p[idx], u, config.lambda_ema)
                pseudo.p[idx] = p_batch

                loss = batch_loss(params, prototypes, fwd, p_batch, tau=config.tau, align_w=w,
                                  variant=config.variant, partner=partner, mix_coeff=phi)
                params = params.replace(nx.sgd_step(params.arrays, loss.grads, lr, config.weight_decay))
                prototypes = update_prototypes(prototypes, fwd.z1, fwd.z2, pseudo_labels(p_batch), config.gamma_proto)
            except PapiError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b_idx}: {exc}") from exc

            cla_sum += float(loss.cla_rows.sum())
            if loss.ali_rows is not None:
                ali_sum += float(loss.ali_rows.sum())
            if observer is not None:
                observer(BatchState(epoch, b_idx, idx, p_batch, mask_all[idx], prototypes.matrix, loss))

        n = len(dataset)
        em = evaluate_epoch(epoch, params, prototypes, pseudo, dataset, test_set, config, cla_sum / n, ali_sum / n)
        history.append(em)
        log.debug("epoch %d: cla=%.4f ali=%.4f test=%.4f", epoch, em.mean_cla_loss, em.mean_ali_loss, em.test_accuracy)

    return TrainResult(params, prototypes, pseudo, history, initial)


def train_supervised(clean_set: PLLDataset, test_set: PLLDataset | None, config: TrainConfig) -> TrainResult:
    """Reference run with the same network on clean labels (classification loss only)."""
    if not clean_set.is_fully_labeled:
        raise ValueError("supervised reference needs singleton candidate sets")
    return train(clean_set, test_set, config.replace(variant="no_alignment"))


# ----------------------------------------------------------------------------
# metrics CSV

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(history: list[EpochMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for m in history:
        writer.writerow([_fmt(x) for x in dataclasses.astuple(m)])
    return buf.getvalue()


def write_metrics_csv(history: list[EpochMetrics], path) -> None:
    Path(path).write_text(metrics_to_csv(history), encoding="utf-8", newline="")


def read_metrics_csv(path) -> list[EpochMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {header!r}")
        out = []
        for row in reader:
            out.append(EpochMetrics(
                int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]), float(row[5]),
                float(row[6]), int(row[7]), int(row[8]), float(row[9]), float(row[10]),
            ))
    return out
