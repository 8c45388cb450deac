"""Input reduction: anti-aliased decimation, electrode subsets, window cropping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .montage import ChannelSubset, MontageError, load_subset


class ReductionError(ValueError):
    pass


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    cutoff_hz: float
    window: str = "hamming"

    def __post_init__(self):
        if len(self.taps) % 2 != 1:
            raise ReductionError("FIR filter must have an odd number of taps")

    def __len__(self):
        return len(self.taps)

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        n = np.arange(len(self.taps))
        return np.exp(-2j * np.pi * np.outer(np.atleast_1d(freqs_hz), n) / fs) @ self.taps


def design_lowpass(ds: int, fs: float) -> FirFilter:
    """Hamming-windowed sinc for decimation by ``ds``.

    Length is ``10*ds + 1`` and the cutoff sits at 90 % of the
    post-decimation Nyquist frequency. Taps are normalized to unity DC gain.
    ``ds == 1`` gives a single-tap pass-through.
    """
    if ds < 1:
        raise ReductionError(f"ds must be >= 1, got {ds}")
    if ds == 1:
        return FirFilter(np.ones(1), fs / 2, "none")
    length = 10 * ds + 1
    cutoff = 0.9 * fs / (2 * ds)
    n = np.arange(length) - (length - 1) / 2
    h = 2 * cutoff / fs * np.sinc(2 * cutoff / fs * n) * np.hamming(length)
    return FirFilter(h / h.sum(), cutoff, "hamming")


def downsample(signal, ds: int, fir: FirFilter | None = None, fs: float = 160.0) -> np.ndarray:
    """Low-pass filter then keep every ``ds``-th sample along the last axis.

    Edges are extended by symmetric reflection and the filter's group delay
    is compensated, so output sample ``i`` is aligned with input ``i*ds``.
    The output has ``len // ds`` samples.
    """
    x = np.asarray(signal, np.float64)
    if ds == 1:
        return x.copy()
    fir = design_lowpass(ds, fs) if fir is None else fir
    n = x.shape[-1]
    if n < len(fir):
        raise ReductionError(f"signal of {n} samples shorter than the {len(fir)}-tap filter")
    d = fir.group_delay
    pad = [(0, 0)] * (x.ndim - 1) + [(d, d)]
    xp = np.pad(x, pad, mode="symmetric")
    # correlate with the (symmetric) taps: y[i] = sum_k h[k] * x[i + k - d]
    win = np.lib.stride_tricks.sliding_window_view(xp, len(fir), axis=-1)
    y = win[..., : (n // ds) * ds : ds, :] @ fir.taps
    return y


def select_channels(data, source_labels: Sequence[str], subset) -> np.ndarray:
    """Return rows of ``data`` (channels first) in the order the subset lists them."""
    subset = load_subset(subset)
    data = np.asarray(data)
    if data.shape[0] != len(source_labels):
        raise ReductionError(f"{data.shape[0]} rows but {len(source_labels)} channel labels")
    try:
        idx = subset.resolve(source_labels)
    except MontageError as exc:
        raise ReductionError(str(exc)) from exc
    return data[idx]


def window_bounds(fs_eff: float, window_seconds: float, offset_seconds: float = 0.0) -> tuple[int, int]:
    fs_eff = Fraction(fs_eff).limit_denominator(10**6) if isinstance(fs_eff, float) else Fraction(fs_eff)
    start = math.floor(Fraction(str(offset_seconds)) * fs_eff)
    length = math.floor(Fraction(str(window_seconds)) * fs_eff)
    return start, start + length


def crop_window(trial, fs_eff: float, window_seconds: float, offset_seconds: float = 0.0) -> np.ndarray:
    """Cut ``[offset, offset + T)`` seconds out of the last axis of ``trial``."""
    trial = np.asarray(trial)
    start, stop = window_bounds(fs_eff, window_seconds, offset_seconds)
    if offset_seconds < 0 or stop > trial.shape[-1] or stop <= start:
        raise ReductionError(
            f"window [{offset_seconds}, {offset_seconds + window_seconds}) s exceeds the "
            f"{trial.shape[-1] / fs_eff:.3f} s trial")
    return trial[..., start:stop]


def reduce_trial(trial, source_labels: Sequence[str], ds: int, subset, window_seconds: float,
                 fs: float = 160.0, offset_seconds: float = 0.0,
                 fir: FirFilter | None = None) -> np.ndarray:
    """Channel selection, then decimation, then cropping. Input is (channels, samples)."""
    x = select_channels(trial, source_labels, subset)
    x = downsample(x, ds, fir, fs)
    return crop_window(x, Fraction(str(fs)) / ds, window_seconds, offset_seconds)


def reduce_trials(trials, source_labels: Sequence[str], ds: int, subset: ChannelSubset | str,
                  window_seconds: float, fs: float = 160.0, offset_seconds: float = 0.0) -> np.ndarray:
    fir = design_lowpass(ds, fs)
    trials = np.asarray(trials)
    if len(trials) == 0:
        return trials
    return np.stack([reduce_trial(t, source_labels, ds, subset, window_seconds, fs,
                                  offset_seconds, fir) for t in trials])
