"""Mini-batch MSE training with Adam, plateau halving, validation and resumable checkpoints."""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .autograd import checkpoint as ckpt
from .data import CHUNK_LEN, AugmentationPolicy, DatasetManifest, ValidationSet, sample_batch
from .evaluation import exact_mean, snr
from .filters import Setting
from .models import ResNetConfig, UNetConfig, build_network, config_from_dict

log = logging.getLogger(__name__)

LOG_COLUMNS = ["iteration", "avg_train_loss", "snr_seen_db", "snr_unseen_db", "lr"]


class TrainingError(RuntimeError):
    pass


class Regularization(str, enum.Enum):
    NONE = "none"
    BATCH_NORM = "batchnorm"
    DROPOUT = "dropout"
    DATA_AUGMENTATION = "augmentation"

    @classmethod
    def parse(cls, value) -> Regularization:
        if isinstance(value, Regularization):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"none": cls.NONE, "baseline": cls.NONE, "bn": cls.BATCH_NORM,
                   "batchnorm": cls.BATCH_NORM, "do": cls.DROPOUT, "dropout": cls.DROPOUT,
                   "da": cls.DATA_AUGMENTATION, "augmentation": cls.DATA_AUGMENTATION,
                   "dataaugmentation": cls.DATA_AUGMENTATION}
        if key not in aliases:
            raise ValueError(f"unknown regularization {value!r}")
        return aliases[key]

    @property
    def setting(self) -> Setting:
        return Setting.MULTI_FILTER if self is Regularization.DATA_AUGMENTATION else Setting.SINGLE_FILTER


def regularized_config(config, regularization):
    """Copy of an architecture config with batch-norm/dropout switched on as requested."""
    reg = Regularization.parse(regularization)
    values = asdict(config)
    values["use_batch_norm"] = reg is Regularization.BATCH_NORM
    values["use_dropout"] = reg is Regularization.DROPOUT
    return type(config)(**values)


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr0: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    record_interval: int = 2500
    plateau_patience: int = 5
    max_iterations: int = 5000
    seed: int = 0
    regularization: Regularization = Regularization.NONE
    chunk_len: int = CHUNK_LEN

    def __post_init__(self):
        self.regularization = Regularization.parse(self.regularization)
        for name in ("batch_size", "record_interval", "plateau_patience", "chunk_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")

    @property
    def setting(self) -> Setting:
        return self.regularization.setting

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regularization"] = self.regularization.value
        return d


@dataclass
class LogRow:
    iteration: int
    avg_train_loss: float
    snr_seen_db: float
    snr_unseen_db: float
    lr: float


@dataclass
class TrainState:
    iteration: int = 0
    lr: float = 5e-4
    best_loss: float = math.inf
    stale: int = 0
    window_loss_sum: float = 0.0
    window_count: int = 0
    rows: list[LogRow] = field(default_factory=list)
    loss_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_loss"] = _enc(self.best_loss)
        d["rows"] = [{k: _enc(v) for k, v in asdict(r).items()} for r in self.rows]
        return d

    @classmethod
    def from_dict(cls, d) -> TrainState:
        d = dict(d)
        d["best_loss"] = _dec(d["best_loss"])
        d["rows"] = [LogRow(**{k: _dec(v) for k, v in r.items()}) for r in d["rows"]]
        return cls(**d)


def _enc(v):
    # JSON has no infinities or NaN
    return v if not isinstance(v, float) or math.isfinite(v) else repr(v)


def _dec(v):
    return float(v) if isinstance(v, str) else v


def plateau_scheduler(state: TrainState, recorded_loss: float, patience: int = 5) -> bool:
    """Strict-improvement plateau rule; returns True when the rate was halved."""
    if recorded_loss < state.best_loss:
        state.best_loss = recorded_loss
        state.stale = 0
        return False
    state.stale += 1
    if state.stale >= patience:
        state.lr /= 2
        state.stale = 0
        return True
    return False


def validate(net, vset: ValidationSet | None, chunk_len=CHUNK_LEN) -> tuple[float, float]:
    """Mean excerpt SNR of ``net`` on seen- and unseen-filter inputs (eval mode)."""
    if vset is None:
        return math.nan, math.nan
    from .evaluation import chunked_inference

    def mean_snr(excerpts):
        return exact_mean(snr(e.target, chunked_inference(net, e.source.astype(net.dtype), chunk_len))
                          for e in excerpts)

    was_training = net.training
    try:
        return mean_snr(vset.seen), mean_snr(vset.unseen)
    finally:
        net.training = was_training


class Trainer:
    """Owns the network, optimizer state, data RNG and metric log of one run."""

    def __init__(self, net, manifest: DatasetManifest, config: TrainConfig,
                 validation: ValidationSet | None = None, state: TrainState | None = None):
        self.net = net
        self.manifest = manifest
        self.config = config
        self.validation = validation
        self.policy = AugmentationPolicy.from_setting(config.setting)
        self.rng = np.random.default_rng(config.seed)
        self.state = state or TrainState(lr=config.lr0)
        self.params = net.parameters()

    def step(self) -> float:
        cfg = self.config
        x, y, draws = sample_batch(self.manifest, self.policy, self.rng, cfg.batch_size,
                                   cfg.chunk_len, self.net.dtype)
        self.net.train()
        self.net.zero_grad()
        with Tape() as tape:
            loss = ag.mse_loss(self.net(Tensor(x)), Tensor(y))
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at iteration {self.state.iteration + 1} "
                f"(lr {self.state.lr:g}, files {[d.file_index for d in draws]})")
        tape.backward(loss)
        ag.adam_step(self.params, self.state.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
        st = self.state
        st.iteration += 1
        st.window_loss_sum += value
        st.window_count += 1
        st.loss_trace.append(value)
        return value

    def record(self) -> LogRow:
        st = self.state
        avg = st.window_loss_sum / st.window_count
        seen, unseen = validate(self.net, self.validation, self.config.chunk_len)
        row = LogRow(st.iteration, avg, seen, unseen, st.lr)
        if plateau_scheduler(st, avg, self.config.plateau_patience):
            log.info("loss plateau: learning rate halved to %g", st.lr)
        st.rows.append(row)
        st.window_loss_sum, st.window_count = 0.0, 0
        log.info("iter %d  loss %.6g  seen %.3f dB  unseen %.3f dB  lr %g",
                 row.iteration, avg, seen, unseen, row.lr)
        return row

    def run(self, until: int | None = None, checkpoint_path=None, log_path=None) -> TrainState:
        until = self.config.max_iterations if until is None else min(until, self.config.max_iterations)
        while self.state.iteration < until:
            self.step()
            if self.state.iteration % self.config.record_interval == 0:
                self.record()
                if log_path is not None:
                    write_log(self.state.rows, log_path)
                if checkpoint_path is not None:
                    self.save(checkpoint_path)
        return self.state

    # -- checkpoints --

    def save(self, path):
        meta = {
            "arch": self.net.arch,
            "arch_config": asdict(self.net.config) if self.net.config is not None else None,
            "dtype": self.net.dtype.name,
            "train_config": self.config.to_dict(),
            "state": self.state.to_dict(),
            "rng": self.rng.bit_generator.state,
            "net_rng": self.net.rng.bit_generator.state,
        }
        ckpt.save_parameters(path, self.params, self.net.buffers(), meta)

    @classmethod
    def load(cls, path, manifest: DatasetManifest, validation: ValidationSet | None = None,
             max_iterations: int | None = None) -> Trainer:
        net, data = load_network(path)
        meta = data.meta
        tc = meta["train_config"]
        if max_iterations is not None:
            tc = dict(tc, max_iterations=max_iterations)
        trainer = cls(net, manifest, TrainConfig(**tc), validation, TrainState.from_dict(meta["state"]))
        trainer.rng.bit_generator.state = meta["rng"]
        return trainer


def load_network(path):
    """Rebuild the network stored in a checkpoint; returns ``(net, raw checkpoint)``."""
    data = ckpt.load_file(path)
    meta = data.meta
    for key in ("arch", "arch_config", "dtype"):
        if key not in meta:
            raise ckpt.CheckpointError(f"checkpoint metadata lacks {key!r}")
    config = config_from_dict(meta["arch"], meta["arch_config"] or {})
    net = build_network(meta["arch"], config, dtype=np.dtype(meta["dtype"]))
    ckpt.restore_parameters(net.parameters(), data)
    entries = data.by_name()
    buffers = net.buffers()
    missing = [k for k in buffers if k not in entries]
    if missing:
        raise ckpt.CheckpointError(f"checkpoint lacks buffers {missing}")
    net.load_buffers({k: entries[k].values for k in buffers})
    if "net_rng" in meta:
        net.rng.bit_generator.state = meta["net_rng"]
    return net, data


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.iteration, repr(float(r.avg_train_loss)), repr(float(r.snr_seen_db)),
                        repr(float(r.snr_unseen_db)), repr(float(r.lr))])


def train(net, manifest: DatasetManifest, config: TrainConfig, validation: ValidationSet | None = None,
          checkpoint_path=None, log_path=None) -> TrainState:
    """Train ``net`` on the training split of ``manifest`` for ``config.max_iterations`` steps."""
    trainer = Trainer(net, manifest, config, validation)
    if checkpoint_path is not None:
        trainer.save(Path(checkpoint_path).with_suffix(".init.bin"))
    return trainer.run(checkpoint_path=checkpoint_path, log_path=log_path)


__all__ = [
    "LOG_COLUMNS", "LogRow", "Regularization", "ResNetConfig", "TrainConfig", "TrainState",
    "Trainer", "TrainingError", "UNetConfig", "load_network", "plateau_scheduler",
    "regularized_config", "train", "validate", "write_log",
]
