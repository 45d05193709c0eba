"""Two-tower training on sampled triplets, plus checkpoint I/O."""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
import time
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Sequence

import numpy as np

from . import kernels
from .dataset import FeatureSpec, ImplicitSplit
from .metric import check_margin
from .mlp import Activation, MlpParams, NonFiniteError, activation_backward, activation_forward, init_mlp
from .sampler import Triplet, TripletSampler

_log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        self.key = key
        super().__init__(f"{key} {msg}")


class TrainingError(RuntimeError):
    """Training aborted; ``report`` holds the epochs completed so far."""

    def __init__(self, msg: str, report: TrainReport):
        self.report = report
        super().__init__(msg)


def derive_seed(seed: int, name: str) -> int:
    """Independent named sub-seed (``split``, ``init``, ``sampler``, ...) of a run seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    steps_per_epoch: int | None = None  # None: ceil(train interactions / batch_size)
    batch_size: int = 128
    learning_rate: float = 0.001
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    margin: float = 1.0
    embedding_dim: int = 32
    user_hidden: list[int] = field(default_factory=lambda: [64])
    item_hidden: list[int] = field(default_factory=lambda: [64])
    activation: str = "relu"
    threshold: float = 4.0
    train_ratio: float = 0.8
    clip_radius: float | None = None

    def validate(self) -> TrainConfig:
        def positive(key, integer=False):
            val = getattr(self, key)
            if integer and (not isinstance(val, int) or isinstance(val, bool)):
                raise ConfigError(key, "must be an integer")
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ConfigError(key, "must be positive")

        for key in ("batch_size", "embedding_dim"):
            positive(key, integer=True)
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError("epochs", "must be a non-negative integer")
        if self.steps_per_epoch is not None:
            positive("steps_per_epoch", integer=True)
        for key in ("learning_rate", "adam_eps"):
            positive(key)
        for key in ("adam_beta1", "adam_beta2"):
            if not (0.0 <= getattr(self, key) < 1.0):
                raise ConfigError(key, "must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", "must be 'adam' or 'sgd'")
        try:
            check_margin(self.margin)
        except (ValueError, TypeError):
            raise ConfigError("margin", "must be finite and >= 0") from None
        for key in ("user_hidden", "item_hidden"):
            dims = getattr(self, key)
            if not isinstance(dims, list) or any(not isinstance(d, int) or d < 1 for d in dims):
                raise ConfigError(key, "must be a list of positive integers")
        try:
            Activation(self.activation)
        except ValueError:
            raise ConfigError("activation", "must be relu, tanh or identity") from None
        if not (1.0 <= self.threshold <= 5.0):
            raise ConfigError("threshold", "must lie in [1, 5]")
        if not (0.0 < self.train_ratio < 1.0):
            raise ConfigError("train_ratio", "must lie in (0, 1)")
        if self.clip_radius is not None:
            positive("clip_radius")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in names:
                raise ConfigError(key, "is not a TrainConfig field")
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Model:
    user_tower: MlpParams
    item_tower: MlpParams
    margin: float
    feature_spec: FeatureSpec
    clip_radius: float | None = None

    def __post_init__(self):
        if self.user_tower.out_dim != self.item_tower.out_dim:
            raise ValueError("towers must share the embedding dim")
        if self.user_tower.in_dim != self.feature_spec.n1:
            raise ValueError("user tower input dim must equal n1")
        if self.item_tower.in_dim != self.feature_spec.n2:
            raise ValueError("item tower input dim must equal n2")

    @property
    def embedding_dim(self) -> int:
        return self.user_tower.out_dim

    def copy(self) -> Model:
        return Model(
            self.user_tower.copy(), self.item_tower.copy(), self.margin, self.feature_spec,
            self.clip_radius,
        )

    def user_embeddings(self, ids: np.ndarray | None = None) -> np.ndarray:
        if ids is None:
            ids = np.arange(self.feature_spec.n1)
        return tower_forward(self.user_tower, np.asarray(ids, dtype=np.int64), self.clip_radius)[0]

    def item_embeddings(self, ids: np.ndarray | None = None) -> np.ndarray:
        if ids is None:
            ids = np.arange(self.feature_spec.n2)
        return tower_forward(self.item_tower, np.asarray(ids, dtype=np.int64), self.clip_radius)[0]


def init_model(config: TrainConfig, n_users: int, n_items: int, rng: np.random.Generator) -> Model:
    """Glorot-initialised towers ``one-hot -> hidden... -> d``; user tower drawn first."""
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    d = config.embedding_dim
    user = init_mlp([n_users, *config.user_hidden, d], rng, config.activation)
    item = init_mlp([n_items, *config.item_hidden, d], rng, config.activation)
    return Model(user, item, check_margin(config.margin), FeatureSpec(n_users, n_items), config.clip_radius)


# -- batched tower passes over one-hot inputs ------------------------------


@dataclass
class _BatchCache:
    ids: np.ndarray
    inputs: list[np.ndarray]  # inputs[i] feeds layer i+1
    pre: list[np.ndarray]
    unclipped: np.ndarray | None = None


def tower_forward(params: MlpParams, ids: np.ndarray, clip_radius: float | None = None):
    """Embed one-hot ids. The first layer is a column gather of its weight."""
    w0, b0 = params.layers[0]
    if ids.size and (ids.min() < 0 or ids.max() >= w0.shape[1]):
        raise IndexError(f"id out of range [0, {w0.shape[1]})")
    z = w0[:, ids].T + b0
    cache = _BatchCache(ids, [], [z])
    last = len(params.layers) - 1
    for w, b in params.layers[1:]:
        a = activation_forward(params.activation, z)
        cache.inputs.append(a)
        z = a @ w.T + b
        cache.pre.append(z)
    h = z
    if clip_radius is not None:
        cache.unclipped = h
        norms = np.sqrt(np.einsum("ij,ij->i", h, h))
        scale = np.where(norms > clip_radius, clip_radius / np.maximum(norms, 1e-300), 1.0)
        h = h * scale[:, None]
    assert len(cache.pre) == last + 1
    return np.ascontiguousarray(h), cache


def tower_backward(
    params: MlpParams, cache: _BatchCache, grad: np.ndarray, clip_radius: float | None = None
) -> MlpParams:
    """Gradient of ``sum(grad * tower_forward(...))`` w.r.t. the tower's parameters."""
    g = grad
    if clip_radius is not None and cache.unclipped is not None:
        h = cache.unclipped
        norms = np.sqrt(np.einsum("ij,ij->i", h, h))
        over = norms > clip_radius
        if over.any():
            g = g.copy()
            hn, nn, go = h[over], norms[over][:, None], grad[over]
            proj = np.einsum("ij,ij->i", hn, go)[:, None]
            g[over] = (clip_radius / nn) * (go - hn * proj / (nn * nn))
    n = len(params.layers)
    out: list = [None] * n
    for i in range(n - 1, 0, -1):
        w, _ = params.layers[i]
        out[i] = (g.T @ cache.inputs[i - 1], g.sum(axis=0))
        g = activation_backward(params.activation, cache.pre[i - 1], g @ w)
    w0, _ = params.layers[0]
    gw0 = np.zeros_like(w0)
    kernels.scatter_add_columns(gw0, cache.ids, np.ascontiguousarray(g))
    out[0] = (gw0, g.sum(axis=0))
    return MlpParams(out, params.activation)


def loss_and_grads(model: Model, users, pos, neg):
    """Mean triplet loss over a batch, its active fraction, and mean gradients per tower."""
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    b = users.size
    r = model.clip_radius
    ha, ucache = tower_forward(model.user_tower, users, r)
    hi, icache = tower_forward(model.item_tower, np.concatenate([pos, neg]), r)
    hp, hn = np.ascontiguousarray(hi[:b]), np.ascontiguousarray(hi[b:])
    losses, ga, gp, gn = kernels.hinge_triplets(ha, hp, hn, model.margin)
    bad = ~np.isfinite(losses)
    bad |= ~(np.isfinite(ha).all(axis=1) & np.isfinite(hp).all(axis=1) & np.isfinite(hn).all(axis=1))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite loss for triplet {Triplet(int(users[j]), int(pos[j]), int(neg[j]))}")
    gu = tower_backward(model.user_tower, ucache, ga / b, r)
    gi = tower_backward(model.item_tower, icache, np.concatenate([gp, gn]) / b, r)
    for arr in gu.arrays() + gi.arrays():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite gradient in batch starting {Triplet(int(users[0]), int(pos[0]), int(neg[0]))}")
    return float(losses.mean()), float(np.mean(losses > 0.0)), gu, gi


# -- optimizers --------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params: list[np.ndarray], lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            kernels.adam_update(p, np.ascontiguousarray(g), m, v, self.lr, self.beta1, self.beta2, self.eps, self.t)


def make_optimizer(config: TrainConfig, model: Model):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    params = model.user_tower.arrays() + model.item_tower.arrays()
    return Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


def step(model: Model, batch: Sequence[Triplet] | tuple, optimizer) -> tuple[Model, float, float]:
    """One optimizer update on ``batch``; parameters are updated in place.

    ``batch`` is a list of triplets or a ``(users, pos, neg)`` array tuple.
    Returns the model, the batch mean loss and the active-triplet fraction.
    """
    if isinstance(batch, tuple) and len(batch) == 3 and isinstance(batch[0], np.ndarray):
        users, pos, neg = batch
    else:
        users, pos, neg = (np.array(col, dtype=np.int64) for col in zip(*batch))
    loss, active, gu, gi = loss_and_grads(model, users, pos, neg)
    optimizer.update(
        model.user_tower.arrays() + model.item_tower.arrays(), gu.arrays() + gi.arrays()
    )
    return model, loss, active


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    active_fractions: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def log_rows(self) -> list[str]:
        return [
            f"{e + 1},{loss!r},{act!r},{sec:.3f}"
            for e, (loss, act, sec) in enumerate(
                zip(self.epoch_losses, self.active_fractions, self.epoch_seconds)
            )
        ]


LOG_HEADER = "epoch,mean_loss,active_fraction,seconds"


def train(
    config: TrainConfig,
    split: ImplicitSplit,
    n_users: int | None = None,
    on_epoch: Callable[[int, float, float, float], None] | None = None,
) -> tuple[Model, TrainReport]:
    """Train both towers for ``config.epochs`` epochs of sampled triplet batches."""
    config.validate()
    n_users = split.n_users if n_users is None else n_users
    model = init_model(config, n_users, split.n_items, np.random.default_rng(derive_seed(config.seed, "init")))
    report = TrainReport(config=config.to_dict(), seed=config.seed)
    if config.epochs == 0:
        return model, report
    sampler = TripletSampler(split, derive_seed(config.seed, "sampler"))
    steps = config.steps_per_epoch or max(1, math.ceil(split.n_train() / config.batch_size))
    opt = make_optimizer(config, model)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total = active = 0.0
        try:
            for _ in range(steps):
                batch = sampler.sample_arrays(config.batch_size)
                _, loss, act = step(model, batch, opt)
                total += loss
                active += act
        except (NonFiniteError, FloatingPointError) as exc:
            raise TrainingError(f"epoch {epoch + 1}: {exc}", report) from exc
        secs = time.perf_counter() - t0
        report.epoch_losses.append(total / steps)
        report.active_fractions.append(active / steps)
        report.epoch_seconds.append(secs)
        _log.info("epoch %d loss %.5f active %.3f (%.1fs)", epoch + 1, total / steps, active / steps, secs)
        if on_epoch is not None:
            on_epoch(epoch + 1, total / steps, active / steps, secs)
    return model, report


# -- checkpoints -------------------------------------------------------------

MAGIC = b"MRECv1"
_ACT_CODES = {Activation.RELU: 0, Activation.TANH: 1, Activation.IDENTITY: 2}
_ACT_FROM_CODE = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(ValueError):
    pass


class NotACheckpointError(CheckpointError):
    def __init__(self):
        super().__init__("not a checkpoint")


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    def __init__(self):
        super().__init__("truncated checkpoint")


class CheckpointShapeError(CheckpointError):
    pass


def save_checkpoint(model: Model, out: BinaryIO | None = None) -> bytes:
    """Serialise ``model``; also written to ``out`` when given.

    Layout: magic ``MRECv1``; for each tower (user, item) u32 layer count,
    u32 activation code and u32 dims; then every weight and bias, row-major
    float64, user tower first; then d, margin and clip radius (0 = off) as
    float64. All little-endian.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    towers = (model.user_tower, model.item_tower)
    for t in towers:
        dims = t.dims
        buf.write(struct.pack(f"<{len(dims) + 2}I", len(t.layers), _ACT_CODES[t.activation], *dims))
    for t in towers:
        for w, b in t.layers:
            buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    buf.write(struct.pack("<3d", float(model.embedding_dim), model.margin, model.clip_radius or 0.0))
    data = buf.getvalue()
    if out is not None:
        out.write(data)
    return data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError()
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, n: int = 1) -> tuple[int, ...]:
        return struct.unpack(f"<{n}I", self.take(4 * n))

    def f64(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(data: bytes | BinaryIO) -> Model:
    if not isinstance(data, (bytes, bytearray)):
        data = data.read()
    if len(data) < len(MAGIC):
        if MAGIC.startswith(bytes(data)) and data:
            raise TruncatedCheckpointError()
        raise NotACheckpointError()
    if data[: len(MAGIC)] != MAGIC:
        if data[:4] == MAGIC[:4]:
            raise CheckpointVersionError(f"unsupported checkpoint version {data[4:6]!r}")
        raise NotACheckpointError()
    r = _Reader(bytes(data))
    r.pos = len(MAGIC)
    headers = []
    for _ in range(2):
        n_layers, code = r.u32(2)
        if n_layers < 1 or n_layers > 1024 or code not in _ACT_FROM_CODE:
            raise CheckpointShapeError(f"bad tower header (layers={n_layers}, activation={code})")
        headers.append((list(r.u32(n_layers + 1)), _ACT_FROM_CODE[code]))
    towers = []
    for dims, act in headers:
        layers = [(r.f64((o, i)), r.f64((o,))) for i, o in zip(dims[:-1], dims[1:])]
        towers.append(MlpParams(layers, act))
    d, margin, clip = struct.unpack("<3d", r.take(24))
    if r.pos != len(r.data):
        raise CheckpointShapeError(f"{len(r.data) - r.pos} trailing bytes after checkpoint")
    user, item = towers
    if user.out_dim != item.out_dim or int(d) != user.out_dim or d != int(d):
        raise CheckpointShapeError(
            f"embedding dim mismatch: header {d}, towers {user.out_dim}/{item.out_dim}"
        )
    return Model(user, item, margin, FeatureSpec(user.in_dim, item.in_dim), clip if clip > 0 else None)
