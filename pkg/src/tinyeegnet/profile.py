"""MACC counting, latency/energy estimation and accuracy-vs-memory sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .arch import (N_DEPTH_MAPS, N_TEMPORAL_FILTERS, SEP_KERNEL, AcquisitionSpec, ConfigError,
                   Counts, EEGNetConfig, ReductionSpec, derive_config, peak_two_buffer_bytes)


class ProfileError(ValueError):
    pass


def macc_count(cfg: EEGNetConfig) -> Counts:
    """Multiply-accumulates per layer on engine-mode shapes.

    Convolution and dense outputs cost one MACC per tap, batch-norm one per
    output element, the dense bias one per class; pooling and activations
    are free.
    """
    ns, nch = cfg.n_samples, cfg.n_channels
    p2, p3 = cfg.pooled_length, cfg.sep_pooled_length
    parts = {
        "conv1": ns * nch * N_TEMPORAL_FILTERS * cfg.kernel_length,
        "bn1": ns * nch * N_TEMPORAL_FILTERS,
        "depthwise": ns * N_DEPTH_MAPS * nch,
        "bn2": ns * N_DEPTH_MAPS,
        "sep_depthwise": p2 * N_DEPTH_MAPS * SEP_KERNEL,
        "sep_pointwise": p2 * N_DEPTH_MAPS * N_DEPTH_MAPS,
        "bn3": p2 * N_DEPTH_MAPS,
        "fc": p3 * N_DEPTH_MAPS * cfg.n_classes + cfg.n_classes,
    }
    return Counts(parts, sum(parts.values()))


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    clock_hz: float
    cycles_per_macc: float
    power_mw: float
    supply_v: float = 3.3

    def __post_init__(self):
        for f in ("clock_hz", "cycles_per_macc", "power_mw", "supply_v"):
            if not getattr(self, f) > 0:
                raise ProfileError(f"{f} must be positive")


def estimate_runtime(macc: float, profile: PlatformProfile) -> float:
    """Seconds per inference."""
    if macc < 0:
        raise ProfileError("MACC count must be non-negative")
    return macc * profile.cycles_per_macc / profile.clock_hz


def estimate_energy(seconds: float, profile: PlatformProfile) -> float:
    """Millijoules per inference."""
    if seconds < 0:
        raise ProfileError("runtime must be non-negative")
    return profile.power_mw * seconds


def _read_text(path: Union[str, Path, None], default: str) -> str:
    if path is None:
        return resources.files("tinyeegnet").joinpath(f"data/{default}").read_text()
    return Path(path).read_text()


def load_platforms(path: Union[str, Path, None] = None) -> dict:
    doc = json.loads(_read_text(path, "platforms.json"))
    return {p["name"]: p for p in doc["platforms"]}


def get_profile(name: str, macc: Optional[float] = None,
                path: Union[str, Path, None] = None) -> PlatformProfile:
    """Resolve a platform, picking the calibration closest in model size."""
    platforms = load_platforms(path)
    key = {n.casefold(): n for n in platforms}.get(name.casefold())
    if key is None:
        raise ProfileError(f"unknown platform {name!r} (known: {', '.join(platforms)})")
    p = platforms[key]
    cals = p["calibrations"]
    if macc is None or macc <= 0:
        cal = cals[0]
    else:
        cal = min(cals, key=lambda c: abs(math.log(c["macc"] / macc)))
    return PlatformProfile(key, p["clock_mhz"] * 1e6, cal["cycles_per_macc"], cal["power_mw"],
                           p.get("supply_v", 3.3))


# -- accuracy table and sweep -----------------------------------------------

GridKey = tuple  # (ds, channels, window_s)


def _key(ds, channels, window_s) -> GridKey:
    return (int(ds), str(channels), float(window_s))


def load_accuracy_table(path: Union[str, Path, None] = None) -> dict:
    """Map ``(ds, channels, window_s, n_classes)`` to accuracy percent."""
    table = {}
    for row in csv.DictReader(io.StringIO(_read_text(path, "accuracy_table.csv"))):
        acc = float(row["accuracy"])
        if not 0 <= acc <= 100:
            raise ProfileError(f"accuracy {acc} outside [0, 100]")
        table[_key(row["ds"], row["channels"], row["window_s"]) + (int(row["n_classes"]),)] = acc
    return table


@dataclass(frozen=True)
class ConfigPoint:
    ds: int
    channels: str
    window_s: float
    n_channels: int
    memory_bytes: int
    accuracy: float
    macc: int

    @property
    def key(self) -> GridKey:
        return (self.ds, self.channels, self.window_s)

    def dominates(self, other: "ConfigPoint") -> bool:
        return (self.memory_bytes <= other.memory_bytes and self.accuracy >= other.accuracy
                and (self.memory_bytes < other.memory_bytes or self.accuracy > other.accuracy))


@dataclass
class SweepResult:
    points: list[ConfigPoint]
    front: list[ConfigPoint]
    budget: Optional[int] = None
    selected: Optional[ConfigPoint] = None


def _order(p: ConfigPoint):
    return (p.memory_bytes, -p.accuracy, p.key)


def pareto_front(points: Sequence[ConfigPoint]) -> list[ConfigPoint]:
    """Non-dominated points; of several identical (memory, accuracy) pairs only the first by key."""
    front, seen = [], set()
    for p in sorted(points, key=_order):
        if (p.memory_bytes, p.accuracy) in seen:
            continue
        if not any(q.dominates(p) for q in points):
            front.append(p)
            seen.add((p.memory_bytes, p.accuracy))
    return front


def evaluate_point(key: GridKey, accuracy: float, n_classes: int,
                   acq: AcquisitionSpec = AcquisitionSpec()) -> ConfigPoint:
    ds, channels, window_s = key
    cfg = derive_config(acq, ReductionSpec(ds, channels, window_s), n_classes)
    return ConfigPoint(ds, channels, window_s, cfg.n_channels, peak_two_buffer_bytes(cfg),
                       accuracy, macc_count(cfg).total)


def sweep(table: Mapping, n_classes: int = 4, grid: Optional[Iterable[GridKey]] = None,
          budget: Optional[int] = None, acq: AcquisitionSpec = AcquisitionSpec()) -> SweepResult:
    """Evaluate memory/MACC for each grid point and find the Pareto front.

    ``grid`` defaults to every entry of ``table`` for ``n_classes``. With a
    ``budget`` in bytes, the most accurate point that fits is selected
    (ties go to the smaller footprint).
    """
    if grid is None:
        grid = sorted(k[:3] for k in table if k[3] == n_classes)
    points = []
    for key in grid:
        key = _key(*key)
        acc = table.get(key + (n_classes,))
        if acc is None:
            raise ProfileError(f"no accuracy entry for ds={key[0]}, channels={key[1]}, "
                               f"T={key[2]:g} s, {n_classes} classes")
        try:
            points.append(evaluate_point(key, acc, n_classes, acq))
        except ConfigError as exc:
            raise ProfileError(f"grid point {key}: {exc}") from exc
    points.sort(key=_order)
    result = SweepResult(points, pareto_front(points), budget)
    if budget is not None:
        fits = [p for p in points if p.memory_bytes <= budget]
        if fits:
            result.selected = min(fits, key=lambda p: (-p.accuracy, p.memory_bytes, p.key))
    return result


def full_grid(ds_values=(1, 2, 3), channels=("all64", "reduced38", "standard19", "headset8"),
              windows=(3.0, 2.0, 1.0)) -> list[GridKey]:
    return [_key(d, c, t) for d in ds_values for c in channels for t in windows]
