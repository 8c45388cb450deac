"""Float32 EEGNet forward pass.

Tensors are ``(time, channel, filter)`` arrays in C order, so time is the
outermost axis and filter the innermost. Convolutions follow the usual deep
learning convention (cross-correlation, no kernel flip, no bias).

The optimized path folds every batch-norm into the preceding convolution
(per-output scale on the kernel plus a bias) so each block is a single
contraction followed by its activation and pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .arch import (N_DEPTH_MAPS, N_TEMPORAL_FILTERS, SEP_KERNEL, SEP_POOL, ArithmeticMode,
                   EEGNetConfig, feature_counts, param_count)

DEFAULT_BN_EPS = 1e-3
F32 = np.float32


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta", "mean", "var"):
            if len(getattr(self, name)) != n:
                raise EngineError(f"batch-norm {name} has {len(getattr(self, name))} entries, expected {n}")
        if np.any(np.asarray(self.var) < 0):
            raise EngineError("batch-norm variance must be non-negative")

    def __len__(self):
        return len(self.gamma)

    @classmethod
    def identity(cls, n: int, eps: float = DEFAULT_BN_EPS) -> "BatchNorm":
        return cls(np.ones(n, F32), np.zeros(n, F32), np.zeros(n, F32),
                   np.full(n, 1.0 - eps, F32))


@dataclass(frozen=True)
class FoldedAffine:
    scale: np.ndarray
    shift: np.ndarray

    def __len__(self):
        return len(self.scale)


Norm = Union[BatchNorm, FoldedAffine]


def fold_batchnorm(bn: BatchNorm, eps: float = DEFAULT_BN_EPS) -> FoldedAffine:
    """Collapse batch-norm statistics into a per-feature scale and shift."""
    gamma, beta, mean, var = (np.asarray(a, np.float64) for a in (bn.gamma, bn.beta, bn.mean, bn.var))
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return FoldedAffine(scale.astype(F32), shift.astype(F32))


@dataclass(frozen=True)
class ModelWeights:
    """Every trainable tensor of one network, in canonical order.

    Layouts: ``conv1`` (8, N_f); ``depthwise`` (16, N_ch), output map ``m``
    reads temporal filter ``m // 2``; ``sep_depthwise`` (16, 16) as (map, tap);
    ``sep_pointwise`` (16, 16) as (out, in); ``fc_weights`` (flatten, N_cl)
    with time-major flatten order; ``fc_bias`` (N_cl,).
    """

    conv1: np.ndarray
    bn1: Norm
    depthwise: np.ndarray
    bn2: Norm
    sep_depthwise: np.ndarray
    sep_pointwise: np.ndarray
    bn3: Norm
    fc_weights: np.ndarray
    fc_bias: np.ndarray
    bn_eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        kinds = {type(b) for b in (self.bn1, self.bn2, self.bn3)}
        if len(kinds) != 1:
            raise EngineError("mixed folded and unfolded batch-norm layers")

    @property
    def folded(self) -> bool:
        return isinstance(self.bn1, FoldedAffine)

    def tensors(self) -> list[np.ndarray]:
        """Flat tensor list in serialization order."""
        out = [self.conv1]
        out += _norm_rows(self.bn1)
        out.append(self.depthwise)
        out += _norm_rows(self.bn2)
        out += [self.sep_depthwise, self.sep_pointwise]
        out += _norm_rows(self.bn3)
        out += [self.fc_weights, self.fc_bias]
        return out

    def n_elements(self) -> int:
        return sum(int(np.asarray(t).size) for t in self.tensors())

    def fold(self) -> "ModelWeights":
        if self.folded:
            return self
        from dataclasses import replace
        return replace(self, bn1=fold_batchnorm(self.bn1, self.bn_eps),
                       bn2=fold_batchnorm(self.bn2, self.bn_eps),
                       bn3=fold_batchnorm(self.bn3, self.bn_eps))

    def check(self, cfg: EEGNetConfig) -> None:
        expect = {
            "conv1": (N_TEMPORAL_FILTERS, cfg.kernel_length),
            "depthwise": (N_DEPTH_MAPS, cfg.n_channels),
            "sep_depthwise": (N_DEPTH_MAPS, SEP_KERNEL),
            "sep_pointwise": (N_DEPTH_MAPS, N_DEPTH_MAPS),
            "fc_weights": (cfg.flatten, cfg.n_classes),
            "fc_bias": (cfg.n_classes,),
        }
        for name, shape in expect.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise EngineError(f"{name} has shape {got}, config expects {shape}")
        for name, n in (("bn1", N_TEMPORAL_FILTERS), ("bn2", N_DEPTH_MAPS), ("bn3", N_DEPTH_MAPS)):
            if len(getattr(self, name)) != n:
                raise EngineError(f"{name} has {len(getattr(self, name))} features, expected {n}")


def _norm_rows(bn: Norm) -> list[np.ndarray]:
    # folded affines keep the 4-row layout: (scale, shift, 0, 1)
    if isinstance(bn, BatchNorm):
        return [bn.gamma, bn.beta, bn.mean, bn.var]
    n = len(bn)
    return [bn.scale, bn.shift, np.zeros(n, F32), np.ones(n, F32)]


def random_weights(cfg: EEGNetConfig, rng=None, folded: bool = False,
                   eps: float = DEFAULT_BN_EPS) -> ModelWeights:
    """Random but well-scaled weights, handy for tests and fixtures."""
    rng = np.random.default_rng(rng)

    def bn(n):
        return BatchNorm(rng.uniform(0.5, 1.5, n).astype(F32), rng.normal(0, 0.1, n).astype(F32),
                         rng.normal(0, 0.1, n).astype(F32), rng.uniform(0.5, 2.0, n).astype(F32))

    w = ModelWeights(
        conv1=(rng.normal(size=(N_TEMPORAL_FILTERS, cfg.kernel_length)) / np.sqrt(cfg.kernel_length)).astype(F32),
        bn1=bn(N_TEMPORAL_FILTERS),
        depthwise=(rng.normal(size=(N_DEPTH_MAPS, cfg.n_channels)) / np.sqrt(cfg.n_channels)).astype(F32),
        bn2=bn(N_DEPTH_MAPS),
        sep_depthwise=(rng.normal(size=(N_DEPTH_MAPS, SEP_KERNEL)) / 4).astype(F32),
        sep_pointwise=(rng.normal(size=(N_DEPTH_MAPS, N_DEPTH_MAPS)) / 4).astype(F32),
        bn3=bn(N_DEPTH_MAPS),
        fc_weights=(rng.normal(size=(cfg.flatten, cfg.n_classes)) / np.sqrt(cfg.flatten)).astype(F32),
        fc_bias=rng.normal(0, 0.1, cfg.n_classes).astype(F32),
        bn_eps=eps,
    )
    return w.fold() if folded else w


def zero_weights(cfg: EEGNetConfig, eps: float = DEFAULT_BN_EPS) -> ModelWeights:
    return ModelWeights(
        conv1=np.zeros((N_TEMPORAL_FILTERS, cfg.kernel_length), F32),
        bn1=BatchNorm.identity(N_TEMPORAL_FILTERS, eps),
        depthwise=np.zeros((N_DEPTH_MAPS, cfg.n_channels), F32),
        bn2=BatchNorm.identity(N_DEPTH_MAPS, eps),
        sep_depthwise=np.zeros((N_DEPTH_MAPS, SEP_KERNEL), F32),
        sep_pointwise=np.zeros((N_DEPTH_MAPS, N_DEPTH_MAPS), F32),
        bn3=BatchNorm.identity(N_DEPTH_MAPS, eps),
        fc_weights=np.zeros((cfg.flatten, cfg.n_classes), F32),
        fc_bias=np.zeros(cfg.n_classes, F32),
        bn_eps=eps,
    )


# -- layer operations -------------------------------------------------------

def same_padding(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def _as_tensor3(x) -> np.ndarray:
    x = np.asarray(x, F32)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise EngineError(f"expected a (time, channel, filter) tensor, got shape {x.shape}")
    return x


def conv_temporal_same(x, kernels) -> np.ndarray:
    """Same-padded temporal convolution applied to every channel.

    ``x`` is (N_s, N_ch, 1), ``kernels`` (n_filters, N_f); returns
    (N_s, N_ch, n_filters).
    """
    x = _as_tensor3(x)
    kernels = np.asarray(kernels, F32)
    if x.shape[2] != 1:
        raise EngineError(f"temporal convolution expects a single input map, got {x.shape[2]}")
    if kernels.ndim != 2 or kernels.shape[1] < 1:
        raise EngineError(f"bad temporal kernel shape {kernels.shape}")
    left, right = same_padding(kernels.shape[1])
    xp = np.pad(x[:, :, 0], ((left, right), (0, 0)))
    win = sliding_window_view(xp, kernels.shape[1], axis=0)  # (N_s, N_ch, N_f)
    return np.ascontiguousarray(win @ kernels.T)


def apply_norm(x, bn: Norm, eps: float = DEFAULT_BN_EPS) -> np.ndarray:
    if isinstance(bn, FoldedAffine):
        return (x * bn.scale + bn.shift).astype(F32)
    return batchnorm(x, bn, eps)


def batchnorm(x, bn: BatchNorm, eps: float = DEFAULT_BN_EPS) -> np.ndarray:
    x = _as_tensor3(x)
    if len(bn) != x.shape[2]:
        raise EngineError(f"{len(bn)} batch-norm entries for {x.shape[2]} maps")
    denom = np.asarray(bn.var, F32) + F32(eps)
    if np.any(denom <= 0):
        raise EngineError("batch-norm var + eps must be positive")
    return ((x - bn.mean) / np.sqrt(denom) * bn.gamma + bn.beta).astype(F32)


def depthwise_spatial(x, kernels) -> np.ndarray:
    """Valid convolution over the full channel axis with depth multiplier 2."""
    x = _as_tensor3(x)
    kernels = np.asarray(kernels, F32)
    n_maps = kernels.shape[0]
    if kernels.ndim != 2 or kernels.shape[1] != x.shape[1]:
        raise EngineError(f"depthwise kernel {kernels.shape} does not match {x.shape[1]} channels")
    if n_maps != 2 * x.shape[2]:
        raise EngineError(f"{n_maps} depthwise maps for {x.shape[2]} input maps")
    src = x[:, :, np.arange(n_maps) // 2]  # (N_s, N_ch, 16)
    out = np.einsum("tcm,mc->tm", src, kernels)
    return out[:, None, :].astype(F32)


def elu(x) -> np.ndarray:
    x = np.asarray(x, F32)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0))).astype(F32)


def avgpool_time(x, k: int, s: Optional[int] = None) -> np.ndarray:
    x = _as_tensor3(x)
    s = k if s is None else s
    if k < 1 or s < 1:
        raise EngineError("pool kernel and stride must be >= 1")
    if x.shape[0] < k:
        raise EngineError(f"cannot pool {x.shape[0]} samples with kernel {k}")
    win = sliding_window_view(x, k, axis=0)[::s]
    return win.mean(axis=-1, dtype=F32)


def separable_time(x, dw, pw) -> np.ndarray:
    """Per-map temporal convolution (16 taps, same padding) then 1x1 mixing."""
    x = _as_tensor3(x)
    dw = np.asarray(dw, F32)
    pw = np.asarray(pw, F32)
    if x.shape[1] != 1 or dw.shape[0] != x.shape[2] or pw.shape[1] != x.shape[2]:
        raise EngineError(f"separable kernels {dw.shape}/{pw.shape} do not fit input {x.shape}")
    left, right = same_padding(dw.shape[1])
    xp = np.pad(x[:, 0, :], ((left, right), (0, 0)))
    win = sliding_window_view(xp, dw.shape[1], axis=0)  # (L, maps, taps)
    depth = np.einsum("tmk,mk->tm", win, dw)
    return (depth @ pw.T)[:, None, :].astype(F32)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, F32)
    e = np.exp(z - z.max())
    return (e / e.sum()).astype(F32)


def fc_softmax(x, weights, bias) -> tuple[np.ndarray, int]:
    x = np.asarray(x, F32).reshape(-1)
    weights = np.asarray(weights, F32)
    if weights.shape[0] != x.size or weights.shape[1] != len(bias):
        raise EngineError(f"FC weights {weights.shape} do not fit {x.size} inputs / {len(bias)} classes")
    p = softmax(x @ weights + np.asarray(bias, F32))
    return p, int(np.argmax(p))


# -- scratch planning -------------------------------------------------------

STAGES = ("input", "phi1", "phi2", "phi3", "phi4")


@dataclass
class ScratchPlan:
    """Ping-pong layout: even stages live in buffer A, odd stages in buffer B."""

    stage_elements: dict
    buffer_elements: tuple[int, int]

    @property
    def total_bytes(self) -> int:
        return 4 * sum(self.buffer_elements)

    def buffer_of(self, stage: str) -> int:
        return STAGES.index(stage) % 2


def scratch_plan(cfg: EEGNetConfig) -> ScratchPlan:
    stages = feature_counts(cfg, ArithmeticMode.ENGINE).parts
    a = max(stages[s] for s in STAGES[0::2])
    b = max(stages[s] for s in STAGES[1::2])
    return ScratchPlan(dict(stages), (a, b))


@dataclass
class Scratch:
    plan: ScratchPlan
    buffers: tuple = field(init=False)
    used: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        self.buffers = tuple(np.empty(n, F32) for n in self.plan.buffer_elements)

    @classmethod
    def for_config(cls, cfg: EEGNetConfig) -> "Scratch":
        return cls(scratch_plan(cfg))

    def store(self, stage: str, value: np.ndarray) -> np.ndarray:
        buf = self.buffers[self.plan.buffer_of(stage)]
        if value.size > buf.size:
            raise EngineError(f"stage {stage} needs {value.size} elements, buffer holds {buf.size}")
        view = buf[:value.size].reshape(value.shape)
        np.copyto(view, value)
        self.used[stage] = value.size
        return view


# -- full network -----------------------------------------------------------

@dataclass(frozen=True)
class FusedWeights:
    conv1: np.ndarray
    bias1: np.ndarray
    depthwise: np.ndarray
    bias2: np.ndarray
    sep_depthwise: np.ndarray
    sep_pointwise: np.ndarray
    bias3: np.ndarray
    fc_weights: np.ndarray
    fc_bias: np.ndarray


def fuse(weights: ModelWeights) -> FusedWeights:
    """Fold batch-norm into the preceding convolution kernels."""
    w = weights.fold()
    return FusedWeights(
        conv1=(w.conv1 * w.bn1.scale[:, None]).astype(F32),
        bias1=np.asarray(w.bn1.shift, F32),
        depthwise=(w.depthwise * w.bn2.scale[:, None]).astype(F32),
        bias2=np.asarray(w.bn2.shift, F32),
        sep_depthwise=np.asarray(w.sep_depthwise, F32),
        sep_pointwise=(w.sep_pointwise * w.bn3.scale[:, None]).astype(F32),
        bias3=np.asarray(w.bn3.shift, F32),
        fc_weights=np.asarray(w.fc_weights, F32),
        fc_bias=np.asarray(w.fc_bias, F32),
    )


def _finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise EngineError(f"non-finite values after {name}")
    return x


def check_window(window, cfg: EEGNetConfig) -> np.ndarray:
    x = _as_tensor3(window)
    if x.shape != (cfg.n_samples, cfg.n_channels, 1):
        raise EngineError(
            f"window shape {x.shape[:2]} does not match config ({cfg.n_samples}, {cfg.n_channels})")
    return _finite("input", x)


def infer(window, weights: Union[ModelWeights, FusedWeights], cfg: EEGNetConfig,
          scratch: Optional[Scratch] = None) -> tuple[np.ndarray, int]:
    """Classify one (N_s, N_ch) window; returns (probabilities, argmax)."""
    if isinstance(weights, ModelWeights):
        weights.check(cfg)
        weights = fuse(weights)
    fw = weights
    x = check_window(window, cfg)
    store = scratch.store if scratch is not None else (lambda _s, v: v)
    x = store("input", x)

    h = conv_temporal_same(x, fw.conv1) + fw.bias1
    h = store("phi1", _finite("phi1", h.astype(F32)))

    h = depthwise_spatial(h, fw.depthwise) + fw.bias2
    h = avgpool_time(elu(h), cfg.pool_length)
    h = store("phi2", _finite("phi2", h))

    h = separable_time(h, fw.sep_depthwise, fw.sep_pointwise) + fw.bias3
    h = avgpool_time(elu(h), SEP_POOL)
    h = store("phi3", _finite("phi3", h))

    p, k = fc_softmax(h, fw.fc_weights, fw.fc_bias)
    store("phi4", _finite("phi4", p))
    return p, k


def infer_batch(windows, weights: ModelWeights, cfg: EEGNetConfig) -> np.ndarray:
    """Probabilities for a stack of (N_s, N_ch) windows, shape (n, N_cl)."""
    weights.check(cfg)
    fw = fuse(weights)
    windows = np.asarray(windows, F32)
    out = np.empty((len(windows), cfg.n_classes), F32)
    for i, w in enumerate(windows):
        out[i] = infer(w, fw, cfg)[0]
    return out


def engine_param_count(cfg: EEGNetConfig) -> int:
    return param_count(cfg, ArithmeticMode.ENGINE).total
