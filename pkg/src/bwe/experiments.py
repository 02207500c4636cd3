"""Desk-scale seen/unseen filter experiments on a (synthetic) corpus."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .data import AugmentationPolicy, DataError, DatasetManifest, Split, build_validation_set
from .evaluation import EvalReport, evaluate_split
from .filters import seen_test_filter, unseen_filter
from .models import ResNetConfig, UNetConfig, build_network
from .training import Regularization, TrainConfig, Trainer, regularized_config, write_log

log = logging.getLogger(__name__)

# ~3k parameters; fast enough for 5000 batches of 8 x 8192 samples on one core
DESK_RESNET = ResNetConfig(num_blocks=3, channels=8, kernel_size=7)
DESK_UNET = UNetConfig(num_scales=3, channels_per_scale=[4, 8, 8], kernel_sizes=[9, 9, 9])

TABLE_COLUMNS = ["filter", "experiment", "snr_db", "delta_snr_db"]
_SUFFIX = {Regularization.NONE: "", Regularization.DATA_AUGMENTATION: " DA",
           Regularization.BATCH_NORM: " BN", Regularization.DROPOUT: " DO"}
_ARCH_NAME = {"unet": "U-Net", "resnet": "ResNet"}


@dataclass
class ConditionResult:
    arch: str
    regularization: Regularization
    seen: EvalReport
    unseen: EvalReport
    train_seen: EvalReport | None = None
    loss_trace: list[float] = field(default_factory=list)
    log_rows: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return _ARCH_NAME.get(self.arch, self.arch) + _SUFFIX[self.regularization]


def default_arch_config(arch):
    return {"resnet": DESK_RESNET, "unet": DESK_UNET}[arch]


def validation_for(manifest: DatasetManifest, policy: AugmentationPolicy, start_s=8.0, length_s=8.0):
    """Validation excerpts if the manifest's validation split can supply them, else ``None``."""
    split = manifest.split(Split.VALIDATION)
    if len(split) == 0:
        log.warning("no validation split; validation SNR will be logged as nan")
        return None
    try:
        return build_validation_set(split, policy, start_s, length_s)
    except DataError as exc:
        log.warning("validation disabled: %s", exc)
        return None


def run_condition(manifest: DatasetManifest, arch="resnet", regularization=Regularization.NONE,
                  arch_config=None, train_config: TrainConfig | None = None, output_dir=None,
                  evaluate_train=False, validate=True) -> ConditionResult:
    """Train one network and evaluate it on the test split under both filter conditions."""
    reg = Regularization.parse(regularization)
    base = arch_config or default_arch_config(arch)
    tc = train_config or TrainConfig()
    tc = TrainConfig(**{**tc.to_dict(), "regularization": reg})
    net = build_network(arch, regularized_config(base, reg), seed=tc.seed)
    policy = AugmentationPolicy.from_setting(reg.setting)
    validation = validation_for(manifest, policy) if validate else None
    trainer = Trainer(net, manifest.split(Split.TRAIN), tc, validation)
    ckpt_path = log_path = None
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt_path, log_path = out / "checkpoint.bin", out / "train_log.csv"
    trainer.run(checkpoint_path=ckpt_path, log_path=log_path)
    test = manifest.split(Split.TEST)
    result = ConditionResult(arch, reg, evaluate_split(net, test, seen_test_filter(), "seen"),
                             evaluate_split(net, test, unseen_filter(), "unseen"),
                             loss_trace=list(trainer.state.loss_trace), log_rows=list(trainer.state.rows))
    if evaluate_train:
        result.train_seen = evaluate_split(net, manifest.split(Split.TRAIN), seen_test_filter(), "seen")
    if output_dir is not None:
        result.seen.write_csv(Path(output_dir) / "test_seen.csv")
        result.unseen.write_csv(Path(output_dir) / "test_unseen.csv")
        if result.train_seen is not None:
            result.train_seen.write_csv(Path(output_dir) / "train_seen.csv")
        write_log(trainer.state.rows, Path(output_dir) / "train_log.csv")
    return result


def write_table(results: list[ConditionResult], path):
    """Seen/unseen output SNR and improvement per experiment, with an input row per filter."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for label, attr in (("Chebyshev1-6 (seen)", "seen"), ("Butterworth-6 (unseen)", "unseen")):
            if not results:
                break
            first = getattr(results[0], attr)
            w.writerow([label, "Input", f"{first.mean_input_snr_db:.2f}", ""])
            for r in results:
                rep = getattr(r, attr)
                w.writerow([label, r.name, f"{rep.mean_output_snr_db:.2f}", f"{rep.mean_delta_snr_db:+.2f}"])


def gap_reduction(single: ConditionResult, multi: ConditionResult) -> float:
    """Fractional shrinkage of the seen-minus-unseen improvement gap."""
    g_single = single.seen.mean_delta_snr_db - single.unseen.mean_delta_snr_db
    g_multi = multi.seen.mean_delta_snr_db - multi.unseen.mean_delta_snr_db
    if g_single <= 0:
        return math.nan
    return 1.0 - g_multi / g_single
