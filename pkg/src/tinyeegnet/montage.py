"""Electrode montages and named channel subsets.

Subset files are plain text, one channel name per line, ``#`` starts a
comment. Presets ship with the package; a directory named by the
``TINYEEGNET_MONTAGE_DIR`` environment variable is searched first, so
operators can override or add subsets without touching the install.
"""

from __future__ import annotations

import difflib
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

MONTAGE_DIR_ENV = "TINYEEGNET_MONTAGE_DIR"
PRESETS = ("all64", "reduced38", "standard19", "headset8")


class MontageError(ValueError):
    pass


def normalize_label(label: str) -> str:
    """Case-fold a channel label and strip padding/trailing dots.

    The BCI2000 EDF files pad labels with dots (``"Fc5."``, ``"C3.."``).
    """
    return label.strip().rstrip(".").strip().casefold()


def parse_subset_text(text: str) -> list[str]:
    names = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


@dataclass(frozen=True)
class ChannelSubset:
    name: str
    channels: tuple[str, ...]

    def __post_init__(self):
        if not self.channels:
            raise MontageError(f"channel subset {self.name!r} is empty")
        seen = set()
        for ch in self.channels:
            key = normalize_label(ch)
            if key in seen:
                raise MontageError(f"duplicate channel {ch!r} in subset {self.name!r}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.channels)

    def resolve(self, source: Sequence[str]) -> list[int]:
        """Map each subset channel to its row index in ``source``.

        Raises MontageError naming the closest source label when a channel
        cannot be found.
        """
        lookup = {}
        for i, label in enumerate(source):
            lookup.setdefault(normalize_label(label), i)
        idx = []
        for ch in self.channels:
            key = normalize_label(ch)
            if key not in lookup:
                close = difflib.get_close_matches(key, list(lookup), n=1)
                hint = f"; did you mean {source[lookup[close[0]]]!r}?" if close else ""
                raise MontageError(f"channel {ch!r} not found in source montage{hint}")
            idx.append(lookup[key])
        return idx


def _preset_text(name: str) -> str | None:
    override = os.environ.get(MONTAGE_DIR_ENV)
    if override:
        p = Path(override) / f"{name}.txt"
        if p.is_file():
            return p.read_text()
    res = resources.files("tinyeegnet").joinpath(f"data/montages/{name}.txt")
    if res.is_file():
        return res.read_text()
    return None


def load_subset(spec: Union[str, Path, Iterable[str], ChannelSubset]) -> ChannelSubset:
    """Build a ChannelSubset from a preset name, a file path, ``"C3,Cz,C4"`` or a list of names."""
    if isinstance(spec, ChannelSubset):
        return spec
    if isinstance(spec, (str, Path)):
        text = _preset_text(str(spec)) if isinstance(spec, str) else None
        if text is not None:
            return ChannelSubset(str(spec), tuple(parse_subset_text(text)))
        path = Path(spec)
        if path.is_file():
            return ChannelSubset(path.stem, tuple(parse_subset_text(path.read_text())))
        if isinstance(spec, str) and "," in spec:
            return ChannelSubset("custom", tuple(n.strip() for n in spec.split(",") if n.strip()))
        raise MontageError(f"unknown channel subset {str(spec)!r} (presets: {', '.join(PRESETS)})")
    names = tuple(spec)
    return ChannelSubset("custom", names)


def source_montage() -> tuple[str, ...]:
    """The 64-channel source montage in recording order."""
    return load_subset("all64").channels
