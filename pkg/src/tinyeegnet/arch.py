"""Architecture configuration, parameter/feature counts and RAM planning.

Two arithmetic modes are supported. ``PAPER`` evaluates the closed-form
table expressions with exact rationals, so sizes such as ``N_s / N_p / 8``
may be fractional. ``ENGINE`` floors at every pooling stage and reports what
the inference engine actually allocates and loads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Union

from .montage import ChannelSubset, MontageError, load_subset, source_montage

BYTES_PER_FEATURE = 4  # binary32
N_TEMPORAL_FILTERS = 8
N_DEPTH_MAPS = 16
SEP_KERNEL = 16
SEP_POOL = 8
BASE_KERNEL = 128
BASE_POOL = 8

Number = Union[int, Fraction]


class ConfigError(ValueError):
    pass


class ArithmeticMode(str, Enum):
    PAPER = "paper"
    ENGINE = "engine"


def _mode(mode) -> ArithmeticMode:
    return ArithmeticMode(mode)


@dataclass(frozen=True)
class AcquisitionSpec:
    fs: float = 160.0
    n_channels_total: int = 64
    trial_seconds: float = 3.0
    montage: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if not self.fs > 0:
            raise ConfigError("sampling rate must be positive")
        if self.n_channels_total < 1:
            raise ConfigError("need at least one channel")
        if not self.trial_seconds > 0:
            raise ConfigError("trial length must be positive")
        if self.montage is not None and len(self.montage) != self.n_channels_total:
            raise ConfigError("montage length differs from n_channels_total")

    def channel_labels(self) -> tuple[str, ...]:
        if self.montage is not None:
            return self.montage
        if self.n_channels_total == 64:
            return source_montage()
        return tuple(f"ch{i}" for i in range(self.n_channels_total))


@dataclass(frozen=True)
class ReductionSpec:
    ds: int = 1
    channels: Union[str, Sequence[str], ChannelSubset] = "all64"
    window_seconds: float = 3.0

    def subset(self) -> ChannelSubset:
        try:
            return load_subset(self.channels)
        except MontageError as exc:
            raise ConfigError(str(exc)) from exc


def _exact(x) -> Fraction:
    # str() keeps decimal literals like 0.1 exact instead of their binary expansion
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def kernel_length(ds: int) -> int:
    return -(-BASE_KERNEL // ds)


def pool_length(ds: int) -> int:
    return -(-BASE_POOL // ds)


@dataclass(frozen=True)
class EEGNetConfig:
    """Concrete hyperparameters of one EEGNet instance.

    Attributes
    ----------
    n_samples : int
        Input samples per window (N_s).
    n_channels : int
        Electrode count (N_ch).
    n_classes : int
        Output classes (N_cl), 2 to 4.
    kernel_length : int
        Temporal kernel taps of the first convolution (N_f).
    pool_length : int
        First average-pooling length (N_p).
    ds, window_seconds, subset, fs
        Provenance of the reduction that produced this config.
    """

    n_samples: int
    n_channels: int
    n_classes: int
    kernel_length: int
    pool_length: int
    ds: int = 1
    fs: float = 160.0
    window_seconds: Optional[float] = field(default=None, compare=False)
    subset: str = field(default="custom", compare=False)

    def __post_init__(self):
        for name in ("n_samples", "n_channels", "kernel_length", "pool_length", "ds"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_classes not in (2, 3, 4):
            raise ConfigError(f"n_classes must be 2, 3 or 4, got {self.n_classes!r}")
        if self.kernel_length != kernel_length(self.ds):
            raise ConfigError(
                f"kernel_length {self.kernel_length} inconsistent with ds={self.ds} "
                f"(expected {kernel_length(self.ds)})")
        if self.pool_length != pool_length(self.ds):
            raise ConfigError(
                f"pool_length {self.pool_length} inconsistent with ds={self.ds} "
                f"(expected {pool_length(self.ds)})")
        if self.n_samples < self.pool_length * SEP_POOL:
            raise ConfigError(
                f"n_samples={self.n_samples} too short for the pooling pipeline "
                f"(need >= {self.pool_length * SEP_POOL})")

    @classmethod
    def from_ds(cls, n_samples: int, n_channels: int, n_classes: int = 4, ds: int = 1,
                **kw) -> "EEGNetConfig":
        return cls(n_samples, n_channels, n_classes, kernel_length(ds), pool_length(ds),
                   ds=ds, **kw)

    @property
    def fs_eff(self) -> float:
        return self.fs / self.ds

    @property
    def pooled_length(self) -> int:
        return self.n_samples // self.pool_length

    @property
    def sep_pooled_length(self) -> int:
        return self.pooled_length // SEP_POOL

    @property
    def flatten(self) -> int:
        return self.sep_pooled_length * N_DEPTH_MAPS

    def replace(self, **changes) -> "EEGNetConfig":
        from dataclasses import replace
        return replace(self, **changes)


def derive_config(acq: AcquisitionSpec = AcquisitionSpec(), red: ReductionSpec = ReductionSpec(),
                  n_classes: int = 4) -> EEGNetConfig:
    if not isinstance(red.ds, int) or red.ds < 1:
        raise ConfigError(f"ds must be an integer >= 1, got {red.ds!r}")
    if not red.window_seconds > 0:
        raise ConfigError("window must be positive")
    if _exact(red.window_seconds) > _exact(acq.trial_seconds):
        raise ConfigError(
            f"window of {red.window_seconds} s exceeds the {acq.trial_seconds} s trial")
    subset = red.subset()
    try:
        subset.resolve(acq.channel_labels())
    except MontageError as exc:
        raise ConfigError(str(exc)) from exc
    n_samples = math.floor(_exact(red.window_seconds) * _exact(acq.fs) / red.ds)
    return EEGNetConfig(
        n_samples=n_samples,
        n_channels=len(subset),
        n_classes=n_classes,
        kernel_length=kernel_length(red.ds),
        pool_length=pool_length(red.ds),
        ds=red.ds,
        fs=acq.fs,
        window_seconds=red.window_seconds,
        subset=subset.name,
    )


def standard_config(n_classes: int = 4) -> EEGNetConfig:
    return derive_config(n_classes=n_classes)


def model1_config(n_classes: int = 4) -> EEGNetConfig:
    return derive_config(red=ReductionSpec(3, "reduced38", 1.0), n_classes=n_classes)


def model2_config(n_classes: int = 4) -> EEGNetConfig:
    return derive_config(red=ReductionSpec(3, "reduced38", 2.0), n_classes=n_classes)


@dataclass(frozen=True)
class LayerRecord:
    block: str
    name: str
    kind: str
    n_out: Optional[int]
    padding: Optional[str]
    kernel: Optional[tuple[int, int]]
    stride: Optional[tuple[int, int]]
    output_shape: tuple[Number, Number, Number]  # (time, channel, filter)
    params: int

    @property
    def features(self) -> Number:
        t, c, f = self.output_shape
        return t * c * f


@dataclass(frozen=True)
class LayerPlan:
    mode: ArithmeticMode
    config: EEGNetConfig
    layers: tuple[LayerRecord, ...] = field(default_factory=tuple)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def block_output(self, block: str) -> tuple[Number, Number, Number]:
        return [r for r in self.layers if r.block == block][-1].output_shape


def _stage_lengths(cfg: EEGNetConfig, mode: ArithmeticMode) -> tuple[Number, Number]:
    if mode is ArithmeticMode.PAPER:
        pooled = Fraction(cfg.n_samples, cfg.pool_length)
        return pooled, pooled / SEP_POOL
    return cfg.pooled_length, cfg.sep_pooled_length


def layer_plan(cfg: EEGNetConfig, mode=ArithmeticMode.ENGINE) -> LayerPlan:
    mode = _mode(mode)
    ns, nch, ncl = cfg.n_samples, cfg.n_channels, cfg.n_classes
    p2, p3 = _stage_lengths(cfg, mode)
    s1 = (ns, nch, N_TEMPORAL_FILTERS)
    s_dw = (ns, 1, N_DEPTH_MAPS)
    s2 = (p2, 1, N_DEPTH_MAPS)
    s_sep = (p2, 1, N_DEPTH_MAPS)
    s3 = (p3, 1, N_DEPTH_MAPS)
    s4 = (1, 1, ncl)
    fc_in = p3 * N_DEPTH_MAPS
    fc_params = (fc_in + 1) * ncl
    if isinstance(fc_params, Fraction) and fc_params.denominator == 1:
        fc_params = int(fc_params)
    R = LayerRecord
    layers = (
        R("phi1", "conv1", "Conv2d", 8, "same", (cfg.kernel_length, 1), (1, 1), s1,
          N_TEMPORAL_FILTERS * cfg.kernel_length),
        R("phi1", "bn1", "BatchNorm2d", None, None, None, None, s1, 4 * N_TEMPORAL_FILTERS),
        R("phi2", "depthwise", "DepthConv2d", 16, "valid", (1, nch), (1, 1), s_dw,
          N_DEPTH_MAPS * nch),
        R("phi2", "bn2", "BatchNorm2d", None, None, None, None, s_dw, 4 * N_DEPTH_MAPS),
        R("phi2", "elu2", "EluAct", None, None, None, None, s_dw, 0),
        R("phi2", "pool2", "AvgPool2d", None, "valid", (cfg.pool_length, 1),
          (cfg.pool_length, 1), s2, 0),
        R("phi3", "sepconv", "SepConv2d", 16, "same", (SEP_KERNEL, 1), (1, 1), s_sep,
          N_DEPTH_MAPS * SEP_KERNEL + N_DEPTH_MAPS * N_DEPTH_MAPS),
        R("phi3", "bn3", "BatchNorm2d", None, None, None, None, s_sep, 4 * N_DEPTH_MAPS),
        R("phi3", "elu3", "EluAct", None, None, None, None, s_sep, 0),
        R("phi3", "pool3", "AvgPool2d", None, "valid", (SEP_POOL, 1), (SEP_POOL, 1), s3, 0),
        R("phi4", "fc", "FC", ncl, None, None, None, s4, fc_params),
        R("phi4", "softmax", "SoftMaxAct", None, None, None, None, s4, 0),
    )
    return LayerPlan(mode, cfg, layers)


@dataclass(frozen=True)
class Counts:
    """Per-entry counts keyed by name, plus their sum."""

    parts: dict
    total: Number

    def __getitem__(self, key):
        return self.parts[key]


def param_count(cfg: EEGNetConfig, mode=ArithmeticMode.ENGINE) -> Counts:
    plan = layer_plan(cfg, mode)
    parts = {r.name: r.params for r in plan if r.params}
    return Counts(parts, sum(parts.values()))


def paper_param_total(cfg: EEGNetConfig) -> Number:
    """Closed-form parameter total in paper arithmetic mode."""
    v = (672 + 16 * cfg.n_channels + 8 * cfg.kernel_length
         + (2 * Fraction(cfg.n_samples, cfg.pool_length) + 1) * cfg.n_classes)
    return int(v) if v.denominator == 1 else v


def paper_feature_total(cfg: EEGNetConfig) -> Number:
    v = (cfg.n_samples * (9 * cfg.n_channels + Fraction(18, cfg.pool_length))
         + cfg.n_classes)
    return int(v) if v.denominator == 1 else v


def feature_counts(cfg: EEGNetConfig, mode=ArithmeticMode.ENGINE) -> Counts:
    """Feature-map element counts per stage, including the input map."""
    plan = layer_plan(cfg, mode)
    parts = {"input": cfg.n_samples * cfg.n_channels}
    for block in ("phi1", "phi2", "phi3", "phi4"):
        t, c, f = plan.block_output(block)
        v = t * c * f
        parts[block] = int(v) if isinstance(v, Fraction) and v.denominator == 1 else v
    total = sum(parts.values())
    if isinstance(total, Fraction) and total.denominator == 1:
        total = int(total)
    return Counts(parts, total)


def peak_two_buffer_features(cfg: EEGNetConfig) -> int:
    stages = list(feature_counts(cfg, ArithmeticMode.ENGINE).parts.values())
    return max(a + b for a, b in zip(stages, stages[1:]))


def peak_two_buffer_bytes(cfg: EEGNetConfig) -> int:
    """RAM needed to hold the largest pair of consecutive feature maps."""
    return BYTES_PER_FEATURE * peak_two_buffer_features(cfg)


def flash_bytes(cfg: EEGNetConfig) -> int:
    return BYTES_PER_FEATURE * param_count(cfg, ArithmeticMode.ENGINE).total
