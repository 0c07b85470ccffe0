"""Encoder / projector / classifier network and the class-prototype store."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import DimensionError, IntegrityError
from .rng import make_rng


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    num_classes: int
    encoder_hidden: tuple[int, ...] = (64,)
    enc_dim: int = 64
    proj_hidden: int = 64
    proj_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        sizes = [self.input_dim, *self.encoder_hidden, self.enc_dim, self.proj_hidden, self.num_classes]
        if any(int(s) < 1 for s in sizes):
            raise DimensionError(f"all layer sizes must be positive: {self}")
        if self.proj_dim < 2:
            raise DimensionError(f"projection dimension must be >= 2, got {self.proj_dim}")

    @property
    def encoder_sizes(self) -> list[int]:
        return [self.input_dim, *self.encoder_hidden, self.enc_dim]

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        enc = self.encoder_sizes
        for i in range(len(enc) - 1):
            shapes[f"enc{i}"] = (enc[i], enc[i + 1])
        shapes["proj0"] = (self.enc_dim, self.proj_hidden)
        shapes["proj1"] = (self.proj_hidden, self.proj_dim)
        shapes["cls"] = (self.enc_dim, self.num_classes)
        return shapes


@dataclass
class ModelParams:
    """Named weight arrays: ``<layer>.w`` of shape (fan_in, fan_out) and ``<layer>.b``."""

    dims: ModelDims
    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def replace(self, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.dims, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def num_encoder_layers(self) -> int:
        return len(self.dims.encoder_sizes) - 1


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases."""
    rng = make_rng(seed, "init")
    arrays = {}
    for name, (fan_in, fan_out) in dims.layer_shapes().items():
        bound = np.sqrt(6.0 / fan_in)
        arrays[f"{name}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{name}.b"] = np.zeros(fan_out)
    return ModelParams(dims, arrays)


# ----------------------------------------------------------------------------
# sub-network passes

def _mlp_forward(params: ModelParams, names: Sequence[str], x: np.ndarray):
    """Linear layers with ReLU between them (none after the last)."""
    caches = []
    h = x
    for i, name in enumerate(names):
        h, lc = nx.linear_forward(h, params[f"{name}.w"], params[f"{name}.b"])
        rc = None
        if i < len(names) - 1:
            h, rc = nx.relu_forward(h)
        caches.append((lc, rc))
    return h, caches


def _mlp_backward(names: Sequence[str], caches, dout: np.ndarray, grads: dict[str, np.ndarray]) -> np.ndarray:
    d = dout
    for name, (lc, rc) in zip(reversed(names), reversed(caches)):
        if rc is not None:
            d = nx.relu_backward(rc, d)
        d, dw, db = nx.linear_backward(lc, d)
        grads[f"{name}.w"] = grads.get(f"{name}.w", 0.0) + dw
        grads[f"{name}.b"] = grads.get(f"{name}.b", 0.0) + db
    return d


def _encoder_names(params: ModelParams) -> list[str]:
    return [f"enc{i}" for i in range(params.num_encoder_layers)]


_PROJ = ("proj0", "proj1")


def encode(params: ModelParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims.input_dim:
        raise DimensionError(f"expected inputs of shape (B, {params.dims.input_dim}), got {x.shape}")
    return _mlp_forward(params, _encoder_names(params), x)


def encode_backward(params: ModelParams, cache, dv, grads: dict[str, np.ndarray]) -> np.ndarray:
    return _mlp_backward(_encoder_names(params), cache, dv, grads)


def project(params: ModelParams, v):
    """Projector followed by row normalisation; returns (z, cache)."""
    raw, caches = _mlp_forward(params, _PROJ, v)
    return nx.l2_normalize_rows(raw), (raw, caches)


def project_backward(cache, dz, grads: dict[str, np.ndarray]) -> np.ndarray:
    raw, caches = cache
    return _mlp_backward(_PROJ, caches, nx.l2_normalize_rows_backward(raw, dz), grads)


def classify(params: ModelParams, v):
    """Classifier probabilities ``softmax(h(v))``; returns (r, cache)."""
    logits, lc = nx.linear_forward(v, params["cls.w"], params["cls.b"])
    return nx.softmax_rows(logits), lc


def classify_backward(cache, r: np.ndarray, dr, grads: dict[str, np.ndarray]) -> np.ndarray:
    dlogits = nx.softmax_rows_backward(r, dr)
    dv, dw, db = nx.linear_backward(cache, dlogits)
    grads["cls.w"] = grads.get("cls.w", 0.0) + dw
    grads["cls.b"] = grads.get("cls.b", 0.0) + db
    return dv


@dataclass
class ForwardCache:
    v1: np.ndarray
    v2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    r: np.ndarray
    internals: dict = field(default_factory=dict, repr=False)


def forward(params: ModelParams, view1, view2) -> ForwardCache:
    """Run both views through the shared encoder and projector; classify view 1."""
    view1 = np.asarray(view1, dtype=np.float64)
    view2 = np.asarray(view2, dtype=np.float64)
    if view1.shape != view2.shape:
        raise DimensionError(f"views differ in shape: {view1.shape} vs {view2.shape}")
    b = view1.shape[0]
    v, enc_cache = encode(params, np.vstack([view1, view2]))
    z, proj_cache = project(params, v)
    r, cls_cache = classify(params, v[:b])
    return ForwardCache(
        v1=v[:b], v2=v[b:], z1=z[:b], z2=z[b:], r=r,
        internals={"enc": enc_cache, "proj": proj_cache, "cls": cls_cache},
    )


def predict_linear(params: ModelParams, x) -> np.ndarray:
    v, _ = encode(params, x)
    r, _ = classify(params, v)
    return r.argmax(axis=1)


def embed(params: ModelParams, x) -> np.ndarray:
    """Normalised projected embeddings of unaugmented inputs."""
    v, _ = encode(params, x)
    z, _ = project(params, v)
    return z


# ----------------------------------------------------------------------------
# prototypes

@dataclass
class Prototypes:
    matrix: np.ndarray  # (K, d_p), unit rows

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    def copy(self) -> "Prototypes":
        return Prototypes(self.matrix.copy())


def init_prototypes(num_classes: int, proj_dim: int, seed: int) -> Prototypes:
    if num_classes < 2:
        raise DimensionError(f"need at least 2 classes, got {num_classes}")
    rng = make_rng(seed, "prototypes")
    return Prototypes(nx.l2_normalize_rows(rng.standard_normal((num_classes, proj_dim))))


def prototype_logits(z, prototypes: Prototypes, tau: float) -> np.ndarray:
    """Cosine similarity to each prototype divided by the temperature."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != prototypes.matrix.shape[1]:
        raise DimensionError(f"embeddings {z.shape} vs prototypes {prototypes.matrix.shape}")
    return z @ prototypes.matrix.T / tau


# ----------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: ModelParams, prototypes: Prototypes | None = None) -> None:
    """Write an ``.npz`` with one float64 array per parameter plus a JSON manifest.

    Manifest (array ``__manifest__``, UTF-8 JSON bytes):
    ``{"format": "papi-checkpoint", "version": 1, "dims": {...},
    "arrays": [{"name": ..., "shape": [...]}, ...]}``. Prototypes, when given,
    are stored under the name ``prototypes``.
    """
    arrays = dict(params.arrays)
    if prototypes is not None:
        arrays["prototypes"] = prototypes.matrix
    manifest = {
        "format": "papi-checkpoint",
        "version": 1,
        "dims": asdict(params.dims),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    blob = np.frombuffer(json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, __manifest__=blob, **{k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def load_checkpoint(path) -> tuple[ModelParams, Prototypes | None]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__manifest__" not in data:
            raise IntegrityError(f"{path}: missing checkpoint manifest")
        manifest = json.loads(bytes(data["__manifest__"]).decode("utf-8"))
        if manifest.get("format") != "papi-checkpoint":
            raise IntegrityError(f"{path}: not a checkpoint file")
        arrays = {}
        for entry in manifest["arrays"]:
            a = data[entry["name"]]
            if list(a.shape) != entry["shape"]:
                raise IntegrityError(f"{path}: array {entry['name']} has shape {a.shape}, manifest says {entry['shape']}")
            arrays[entry["name"]] = a
    dims = ModelDims(**manifest["dims"])
    protos = arrays.pop("prototypes", None)
    expected = dims.layer_shapes()
    for name, shape in expected.items():
        if arrays.get(f"{name}.w", np.empty(0)).shape != shape:
            raise IntegrityError(f"{path}: layer {name} missing or misshapen")
    return ModelParams(dims, arrays), (Prototypes(protos) if protos is not None else None)
