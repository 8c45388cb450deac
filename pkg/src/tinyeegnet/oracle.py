"""Reference forward pass built from explicit nested summations.

Shares no code with :mod:`tinyeegnet.engine` beyond the weight container:
float64 accumulation, batch-norm evaluated from its raw statistics, no
folding or vectorized contractions. Used to check the optimized path.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .arch import EEGNetConfig
from .engine import BatchNorm, EngineError, ModelWeights


@njit(cache=True)
def _conv_same(x, kernels):
    n_s, n_ch = x.shape
    n_filt, k = kernels.shape
    left = (k - 1) // 2
    out = np.zeros((n_s, n_ch, n_filt))
    for t in range(n_s):
        for c in range(n_ch):
            for f in range(n_filt):
                acc = 0.0
                for j in range(k):
                    src = t + j - left
                    if 0 <= src < n_s:
                        acc += kernels[f, j] * x[src, c]
                out[t, c, f] = acc
    return out


@njit(cache=True)
def _norm(x, g, b, m, v, eps):
    out = np.empty_like(x)
    n0, n1, n2 = x.shape
    for i in range(n0):
        for j in range(n1):
            for f in range(n2):
                out[i, j, f] = g[f] * (x[i, j, f] - m[f]) / math.sqrt(v[f] + eps) + b[f]
    return out


@njit(cache=True)
def _elu(x):
    out = np.empty_like(x)
    n0, n1, n2 = x.shape
    for i in range(n0):
        for j in range(n1):
            for f in range(n2):
                out[i, j, f] = x[i, j, f] if x[i, j, f] > 0 else math.exp(x[i, j, f]) - 1.0
    return out


@njit(cache=True)
def _depthwise(x, kernels):
    n_s, n_ch, _ = x.shape
    n_maps = kernels.shape[0]
    out = np.zeros((n_s, 1, n_maps))
    for t in range(n_s):
        for m in range(n_maps):
            acc = 0.0
            for c in range(n_ch):
                acc += kernels[m, c] * x[t, c, m // 2]
            out[t, 0, m] = acc
    return out


@njit(cache=True)
def _pool(x, k):
    n_out = (x.shape[0] - k) // k + 1
    out = np.zeros((n_out, x.shape[1], x.shape[2]))
    for i in range(n_out):
        for j in range(x.shape[1]):
            for f in range(x.shape[2]):
                acc = 0.0
                for q in range(k):
                    acc += x[i * k + q, j, f]
                out[i, j, f] = acc / k
    return out


@njit(cache=True)
def _separable(x, dw, pw):
    n_t = x.shape[0]
    n_maps, k = dw.shape
    left = (k - 1) // 2
    depth = np.zeros((n_t, n_maps))
    for t in range(n_t):
        for m in range(n_maps):
            acc = 0.0
            for j in range(k):
                src = t + j - left
                if 0 <= src < n_t:
                    acc += dw[m, j] * x[src, 0, m]
            depth[t, m] = acc
    out = np.zeros((n_t, 1, n_maps))
    for t in range(n_t):
        for o in range(n_maps):
            acc = 0.0
            for i in range(n_maps):
                acc += pw[o, i] * depth[t, i]
            out[t, 0, o] = acc
    return out


@njit(cache=True)
def _dense_softmax(h, w, b):
    n_in, n_cl = w.shape
    logits = np.zeros(n_cl)
    for c in range(n_cl):
        acc = b[c]
        for i in range(n_in):
            acc += w[i, c] * h[i]
        logits[c] = acc
    top = logits.max()
    total = 0.0
    p = np.zeros(n_cl)
    for c in range(n_cl):
        p[c] = math.exp(logits[c] - top)
        total += p[c]
    return p / total


def _stats(bn):
    if isinstance(bn, BatchNorm):
        return tuple(np.asarray(a, np.float64) for a in (bn.gamma, bn.beta, bn.mean, bn.var)), None
    n = len(bn)
    # folded affine: gamma=scale, beta=shift, mean=0, and var chosen so var+eps == 1
    return (np.asarray(bn.scale, np.float64), np.asarray(bn.shift, np.float64),
            np.zeros(n), np.ones(n)), 0.0


def oracle_infer(window, weights: ModelWeights, cfg: EEGNetConfig) -> tuple[np.ndarray, int]:
    """Slow reference classifier; same contract as :func:`engine.infer`."""
    weights.check(cfg)
    x = np.asarray(window, np.float64)
    if x.ndim == 3:
        x = x[:, :, 0]
    if x.shape != (cfg.n_samples, cfg.n_channels):
        raise EngineError(f"window shape {x.shape} does not match config")
    eps = float(weights.bn_eps)

    def norm(h, bn):
        (g, b, m, v), override = _stats(bn)
        return _norm(h, g, b, m, v, eps if override is None else override)

    f64 = lambda a: np.asarray(a, np.float64)
    h = norm(_conv_same(x, f64(weights.conv1)), weights.bn1)
    h = _depthwise(h, f64(weights.depthwise))
    h = _pool(_elu(norm(h, weights.bn2)), cfg.pool_length)
    h = _separable(h, f64(weights.sep_depthwise), f64(weights.sep_pointwise))
    h = _pool(_elu(norm(h, weights.bn3)), 8)
    p = _dense_softmax(h.reshape(-1), f64(weights.fc_weights), f64(weights.fc_bias))
    if not np.all(np.isfinite(p)):
        raise EngineError("non-finite oracle output")
    return p, int(np.argmax(p))
