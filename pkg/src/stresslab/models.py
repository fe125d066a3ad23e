"""Convolutional surrogates mapping the image encodings to the von Mises field.

All three models take a batch of channel-last inputs and return an
N x H x W x 1 non-negative field:

* ``scsnet``: single-channel image plus the raw (qx, qy) pair injected at the
  bottleneck of a dense convolutional autoencoder.
* ``stressnet``: five-channel encoding through a strided encoder, a stack of
  squeeze-and-excitation residual blocks and a transposed-conv decoder.
* ``fusionnet``: three independent SCSNet-style encoders over the geometry,
  load and boundary-condition channel groups feeding one shared decoder.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from stresslab import metrics
from stresslab.autodiff import ops
from stresslab.autodiff.layers import BatchNorm, Conv2D, ConvTranspose2D, Dense, Module, SEResBlock
from stresslab.autodiff.optim import Adam, ExponentialDecay
from stresslab.autodiff.tensor import Tensor
from stresslab.errors import (
    BadMagic,
    ConfigMismatch,
    EmptyDataset,
    FormatError,
    NonFiniteError,
    ShapeMismatch,
    TruncatedPayload,
    VersionMismatch,
)

ARCHS = ("scsnet", "stressnet", "fusionnet")
# stressnet: C1/C5, C2/C4, C3 and residual channels; scsnet/fusionnet: E1/D5, E3, D7 channels
DEFAULT_WIDTHS = {"stressnet": (32, 64, 128), "scsnet": (32, 64, 16), "fusionnet": (32, 64, 16)}


@dataclass(frozen=True)
class ArchitectureConfig:
    arch: str = "stressnet"
    widths: tuple[int, ...] | None = None
    se_reduction: int = 16
    blocks: int = 5
    latent: int = 30
    hidden: int = 1024
    height: int = 24
    width: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigMismatch(f"unknown architecture {self.arch!r}")
        widths = DEFAULT_WIDTHS[self.arch] if self.widths is None else self.widths
        object.__setattr__(self, "widths", tuple(int(w) for w in widths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigMismatch(f"widths must be three positive integers, got {self.widths}")
        if self.blocks < 1 or self.se_reduction < 1 or self.latent < 1 or self.hidden < 1:
            raise ConfigMismatch("blocks, se_reduction, latent and hidden must be >= 1")
        if self.height % 4 or self.width % 4:
            raise ConfigMismatch("height and width must be divisible by 4")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ArchitectureConfig:
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


@dataclass
class ModelInput:
    """One batch in the layout the models consume.

    ``multi``: N x H x W x 5 (geometry, load-x, load-y, bc-x, bc-y);
    ``single``: N x H x W x 1; ``loads``: N x 2 raw (qx, qy).
    """

    multi: np.ndarray
    single: np.ndarray
    loads: np.ndarray

    @property
    def geometry(self) -> np.ndarray:
        return (self.multi[..., :1] > 0).astype(self.multi.dtype)

    def __len__(self):
        return self.multi.shape[0]

    def astype(self, dtype) -> ModelInput:
        return ModelInput(self.multi.astype(dtype), self.single.astype(dtype), self.loads.astype(dtype))


class _Encoder(Module):
    """conv3x3-ReLU, pool, conv3x3-ReLU, pool, flatten, FC-ReLU, FC (linear latent)."""

    def __init__(self, name, c_in, cfg: ArchitectureConfig, rng, dtype):
        super().__init__()
        c1, c2, _ = cfg.widths
        self.conv1 = Conv2D(f"{name}.conv1", c_in, c1, 3, rng, dtype=dtype)
        self.conv2 = Conv2D(f"{name}.conv2", c1, c2, 3, rng, dtype=dtype)
        flat = (cfg.height // 4) * (cfg.width // 4) * c2
        self.fc1 = Dense(f"{name}.fc1", flat, cfg.hidden, rng, dtype)
        self.fc2 = Dense(f"{name}.fc2", cfg.hidden, cfg.latent, rng, dtype)
        self.flat = flat

    def forward(self, x: Tensor) -> Tensor:
        y = ops.max_pool2x2(ops.relu(self.conv1(x)))
        y = ops.max_pool2x2(ops.relu(self.conv2(y)))
        y = ops.reshape(y, (y.shape[0], self.flat))
        return self.fc2(ops.relu(self.fc1(y)))


class _Decoder(Module):
    """FC-ReLU, FC-ReLU, reshape, then upsample/conv stages ending in a ReLU output conv."""

    def __init__(self, name, n_in, cfg: ArchitectureConfig, rng, dtype, convs: int):
        super().__init__()
        _, c2, c3 = cfg.widths
        c1 = cfg.widths[0]
        self.h4, self.w4, self.c = cfg.height // 4, cfg.width // 4, c2
        self.fc1 = Dense(f"{name}.fc1", n_in, cfg.hidden, rng, dtype)
        self.fc2 = Dense(f"{name}.fc2", cfg.hidden, self.h4 * self.w4 * c2, rng, dtype)
        self.conv1 = Conv2D(f"{name}.conv1", c2, c1, 3, rng, dtype=dtype)
        if convs == 3:
            self.conv2 = Conv2D(f"{name}.conv2", c1, c3, 3, rng, dtype=dtype)
            self.out = Conv2D(f"{name}.out", c3, 1, 3, rng, dtype=dtype)
        elif convs == 2:
            self.conv2 = None
            self.out = Conv2D(f"{name}.out", c1, 1, 3, rng, dtype=dtype)
        else:
            raise ConfigMismatch("decoder supports two or three conv layers")

    def forward(self, fr: Tensor) -> Tensor:
        y = ops.relu(self.fc2(ops.relu(self.fc1(fr))))
        y = ops.reshape(y, (y.shape[0], self.h4, self.w4, self.c))
        y = ops.relu(self.conv1(ops.upsample2x(y)))
        y = ops.upsample2x(y)
        if self.conv2 is not None:
            y = ops.relu(self.conv2(y))
        return ops.relu(self.out(y))


class SurrogateModel(Module):
    """Common interface: ``forward(batch) -> N x H x W x 1`` masked to the geometry."""

    cfg: ArchitectureConfig

    def __init__(self, cfg: ArchitectureConfig, dtype):
        super().__init__()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)

    def raw_forward(self, batch: ModelInput) -> Tensor:
        raise NotImplementedError

    def forward(self, batch: ModelInput) -> Tensor:
        out = self.raw_forward(batch)
        return ops.mul_const(out, batch.geometry.astype(self.dtype))

    def conv_layers(self) -> list[Module]:
        found = []

        def walk(m):
            for _, c in m.children():
                if isinstance(c, (Conv2D, ConvTranspose2D)):
                    found.append(c)
                walk(c)

        walk(self)
        return found

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class SCSNet(SurrogateModel):
    def __init__(self, cfg: ArchitectureConfig, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(cfg.seed)
        self.encoder = _Encoder("enc", 1, cfg, rng, dtype)
        self.decoder = _Decoder("dec", cfg.latent + 2, cfg, rng, dtype, convs=3)

    def feature_representation(self, batch: ModelInput) -> Tensor:
        z = self.encoder(Tensor(batch.single.astype(self.dtype, copy=False)))
        return ops.concat([z, Tensor(batch.loads.astype(self.dtype, copy=False))], axis=-1)

    def raw_forward(self, batch: ModelInput) -> Tensor:
        return self.decoder(self.feature_representation(batch))


class FusionNet(SurrogateModel):
    GROUPS = (("geometry", 0, 1), ("loads", 1, 3), ("bcs", 3, 5))

    def __init__(self, cfg: ArchitectureConfig, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(cfg.seed)
        self.encoders = [_Encoder(f"enc_{g}", b - a, cfg, rng, dtype) for g, a, b in self.GROUPS]
        self.decoder = _Decoder("dec", 3 * cfg.latent, cfg, rng, dtype, convs=2)

    def raw_forward(self, batch: ModelInput) -> Tensor:
        x = batch.multi.astype(self.dtype, copy=False)
        parts = [enc(Tensor(np.ascontiguousarray(x[..., a:b]))) for enc, (_, a, b) in zip(self.encoders, self.GROUPS)]
        return self.decoder(ops.concat(parts, axis=-1))


class StressNet(SurrogateModel):
    def __init__(self, cfg: ArchitectureConfig, dtype=np.float32):
        super().__init__(cfg, dtype)
        rng = np.random.default_rng(cfg.seed)
        w1, w2, w3 = cfg.widths
        self.c1 = Conv2D("c1", 5, w1, 9, rng, bias=False, dtype=dtype)
        self.bn1 = BatchNorm("bn1", w1, dtype=dtype)
        self.c2 = Conv2D("c2", w1, w2, 3, rng, stride=2, bias=False, dtype=dtype)
        self.bn2 = BatchNorm("bn2", w2, dtype=dtype)
        self.c3 = Conv2D("c3", w2, w3, 3, rng, stride=2, bias=False, dtype=dtype)
        self.bn3 = BatchNorm("bn3", w3, dtype=dtype)
        self.blocks = [SEResBlock(f"res{i + 1}", w3, cfg.se_reduction, rng, dtype) for i in range(cfg.blocks)]
        self.c4 = ConvTranspose2D("c4", w3, w2, 3, rng, stride=2, bias=False, dtype=dtype)
        self.bn4 = BatchNorm("bn4", w2, dtype=dtype)
        self.c5 = ConvTranspose2D("c5", w2, w1, 3, rng, stride=2, bias=False, dtype=dtype)
        self.bn5 = BatchNorm("bn5", w1, dtype=dtype)
        self.c6 = Conv2D("c6", w1, 1, 9, rng, dtype=dtype)

    def raw_forward(self, batch: ModelInput) -> Tensor:
        y = Tensor(batch.multi.astype(self.dtype, copy=False))
        y = ops.relu(self.bn1(self.c1(y)))
        y = ops.relu(self.bn2(self.c2(y)))
        y = ops.relu(self.bn3(self.c3(y)))
        for block in self.blocks:
            y = block(y)
        y = ops.relu(self.bn4(self.c4(y)))
        y = ops.relu(self.bn5(self.c5(y)))
        return ops.relu(self.c6(y))


_BUILDERS = {"scsnet": SCSNet, "stressnet": StressNet, "fusionnet": FusionNet}


def build_model(cfg: ArchitectureConfig, dtype=np.float32) -> SurrogateModel:
    return _BUILDERS[cfg.arch](cfg, dtype)


def build_scsnet(cfg: ArchitectureConfig | None = None, dtype=np.float32) -> SCSNet:
    cfg = cfg or ArchitectureConfig("scsnet")
    if cfg.arch != "scsnet":
        raise ConfigMismatch(f"build_scsnet got arch {cfg.arch!r}")
    return SCSNet(cfg, dtype)


def build_stressnet(cfg: ArchitectureConfig | None = None, dtype=np.float32) -> StressNet:
    cfg = cfg or ArchitectureConfig("stressnet")
    if cfg.arch != "stressnet":
        raise ConfigMismatch(f"build_stressnet got arch {cfg.arch!r}")
    return StressNet(cfg, dtype)


def build_fusionnet(cfg: ArchitectureConfig | None = None, dtype=np.float32) -> FusionNet:
    cfg = cfg or ArchitectureConfig("fusionnet")
    if cfg.arch != "fusionnet":
        raise ConfigMismatch(f"build_fusionnet got arch {cfg.arch!r}")
    return FusionNet(cfg, dtype)


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"SNCK"
CKPT_VERSION = 1


@dataclass
class ModelCheckpoint:
    config: ArchitectureConfig
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SurrogateModel, metadata: dict | None = None) -> ModelCheckpoint:
        tensors = {name: p.data.astype("<f4") for name, p in model.named_parameters()}
        tensors.update({name: b.astype("<f4") for name, b in model.named_buffers()})
        return cls(model.cfg, tensors, dict(metadata or {}))

    def to_model(self, dtype=np.float32) -> SurrogateModel:
        model = build_model(self.config, dtype)
        params = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        expected = {**{k: p.shape for k, p in params.items()}, **{k: b.shape for k, b in buffers.items()}}
        got = {k: v.shape for k, v in self.tensors.items()}
        if expected != got:
            raise ConfigMismatch("checkpoint tensors do not match a fresh model of the same config")
        for k, p in params.items():
            p.data[...] = self.tensors[k]
        for k, b in buffers.items():
            b[...] = self.tensors[k]
        return model.eval()


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> None:
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in ckpt.tensors.items()]
    header = json.dumps(
        {
            "format": "SNCK",
            "version": CKPT_VERSION,
            "config": ckpt.config.to_dict(),
            "tensors": manifest,
            "metadata": ckpt.metadata,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for v in ckpt.tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    if len(raw) < 8:
        raise TruncatedPayload(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise TruncatedPayload(f"{path}: truncated header")
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("version") != CKPT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {header.get('version')} != {CKPT_VERSION}")
    off = 8 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(raw):
            raise TruncatedPayload(f"{path}: payload ends inside tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).copy()
        off += nbytes
    return ModelCheckpoint(ArchitectureConfig.from_dict(header["config"]), tensors, header.get("metadata", {}))


# -- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr0: float = 1e-3
    gamma: float = 0.97
    decay_steps: int = 100
    seed: int = 0
    target_scale: float = 1.0
    keep_best: bool = False
    eval_batch_size: int = 256

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    test_mae: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    final: dict = field(default_factory=dict)

    def csv(self) -> str:
        lines = ["epoch,train_mse,test_mse,train_mae,test_mae"]
        for row in zip(self.epochs, self.train_mse, self.test_mse, self.train_mae, self.test_mae):
            lines.append(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}")
        return "\n".join(lines) + "\n"


def _check_inputs(model: SurrogateModel, data: ModelInput) -> None:
    h, w = model.cfg.height, model.cfg.width
    if data.multi.shape[1:] != (h, w, 5) or data.single.shape[1:] != (h, w, 1) or data.loads.shape[1:] != (2,):
        raise ShapeMismatch(
            f"inputs {data.multi.shape}/{data.single.shape}/{data.loads.shape} do not fit a {h}x{w} model"
        )


def take_batch(data: ModelInput, idx) -> ModelInput:
    return ModelInput(data.multi[idx], data.single[idx], data.loads[idx])


def predict_batches(model: SurrogateModel, data: ModelInput, batch_size: int = 256, target_scale: float = 1.0) -> np.ndarray:
    """Inference-mode predictions, N x H x W (float64, MPa)."""
    _check_inputs(model, data)
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(data), batch_size):
            batch = take_batch(data, slice(start, start + batch_size))
            out.append(model(batch).data[..., 0].astype(np.float64) * target_scale)
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.cfg.height, model.cfg.width))
    return np.concatenate(out)


def train(
    model: SurrogateModel,
    train_set: tuple[ModelInput, np.ndarray],
    test_set: tuple[ModelInput, np.ndarray] | None,
    hyper: TrainConfig = TrainConfig(),
    log: Callable[[str], None] | None = None,
    stop: Callable[[TrainReport], bool] | None = None,
) -> tuple[ModelCheckpoint, TrainReport]:
    """Mini-batch Adam on the MSE between the masked prediction and the target.

    Per-epoch train MSE/MAE (MPa^2 / MPa) are pooled over the epoch's batches
    in training mode; test metrics are evaluated in inference mode after the
    epoch. ``stop(report)`` is consulted after every epoch and ends training
    early when it returns true. Raises :class:`NonFiniteError` on divergence.
    """
    x_train, y_train = train_set
    _check_inputs(model, x_train)
    if len(x_train) == 0:
        raise EmptyDataset("empty training set")
    if y_train.shape != (len(x_train), model.cfg.height, model.cfg.width):
        raise ShapeMismatch(f"targets {y_train.shape} do not match inputs")
    if test_set is not None:
        _check_inputs(model, test_set[0])
    scale = hyper.target_scale
    rng = np.random.default_rng(hyper.seed)
    opt = Adam(model.parameters(), ExponentialDecay(hyper.lr0, hyper.gamma, hyper.decay_steps))
    report = TrainReport()
    best = None
    t0 = time.perf_counter()
    n = len(x_train)
    y_scaled = (y_train / scale).astype(model.dtype)[..., None]

    for epoch in range(1, hyper.epochs + 1):
        model.train()
        order = rng.permutation(n)
        sq_sum = abs_sum = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = np.sort(order[start : start + hyper.batch_size])
            batch = take_batch(x_train, idx)
            pred = model(batch)
            loss = ops.mse_loss(pred, y_scaled[idx])
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}")
            # the epoch's train metrics accumulate over its batches, as seen during the update
            diff = (pred.data[..., 0] - y_scaled[idx, ..., 0]).astype(np.float64) * scale
            sq_sum += float(np.sum(diff * diff))
            abs_sum += float(np.sum(np.abs(diff)))
            opt.zero_grad()
            loss.backward()
            opt.step()

        pixels = y_train.size
        report.epochs.append(epoch)
        report.train_mse.append(sq_sum / pixels)
        report.train_mae.append(abs_sum / pixels)
        if test_set is not None:
            pred_te = predict_batches(model, test_set[0], hyper.eval_batch_size, scale)
            report.test_mse.append(metrics.mse(test_set[1], pred_te))
            report.test_mae.append(metrics.mae(test_set[1], pred_te))
        else:
            report.test_mse.append(float("nan"))
            report.test_mae.append(float("nan"))
        if hyper.keep_best and test_set is not None and (best is None or report.test_mse[-1] < best[0]):
            best = (report.test_mse[-1], epoch, ModelCheckpoint.from_model(model))
        if log is not None:
            log(
                f"epoch {epoch} train_mse={report.train_mse[-1]:.6g} test_mse={report.test_mse[-1]:.6g} "
                f"train_mae={report.train_mae[-1]:.6g} test_mae={report.test_mae[-1]:.6g} lr={opt.lr:.3g}"
            )
        if stop is not None and stop(report):
            break

    report.wall_clock = time.perf_counter() - t0
    report.final = {
        "train_mse": report.train_mse[-1],
        "test_mse": report.test_mse[-1],
        "train_mae": report.train_mae[-1],
        "test_mae": report.test_mae[-1],
    }
    meta = {"epochs": len(report.epochs), "train": hyper.to_dict(), "final": report.final, "target_scale": scale}
    if best is not None:
        ckpt = best[2]
        meta["best_epoch"] = best[1]
        ckpt.metadata = meta
    else:
        ckpt = ModelCheckpoint.from_model(model, meta)
    return ckpt, report


def predict(ckpt: ModelCheckpoint | SurrogateModel, data: ModelInput, batch_size: int = 256) -> np.ndarray:
    """N x H x W predicted von Mises fields (MPa), exactly zero on void pixels."""
    if isinstance(ckpt, ModelCheckpoint):
        scale = float(ckpt.metadata.get("target_scale", 1.0))
        model = ckpt.to_model()
    else:
        scale, model = 1.0, ckpt
    try:
        _check_inputs(model, data)
    except ShapeMismatch as exc:
        raise ConfigMismatch(f"{model.cfg.arch} cannot take this input: {exc}") from exc
    return predict_batches(model, data, batch_size, scale)


def evaluate(
    ckpt: ModelCheckpoint | SurrogateModel | None,
    data: ModelInput,
    targets: np.ndarray,
    predictions: np.ndarray | None = None,
    solid_only: bool = False,
) -> metrics.MetricsReport:
    """Dataset-level MSE/MAE/MRE and max-stress R^2 (``predictions`` overrides the model)."""
    if len(targets) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    if predictions is None:
        predictions = predict(ckpt, data)
    mask = data.geometry[..., 0] > 0 if solid_only else None
    return metrics.report(targets, predictions, mask=mask)
