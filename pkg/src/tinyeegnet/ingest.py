"""Trial extraction and dataset building for the motor-imagery recordings.

Run layout of each subject (files ``S001R01.edf`` ... ``S001R14.edf``):
run 1 is the eyes-open baseline, runs 4/8/12 are left/right fist imagery
(T1 = L, T2 = R) and runs 6/10/14 are both-fists/feet imagery
(T1 = B, T2 = F). T0 marks rest between cues.

Window tensor files hold ``count`` windows of ``rows x cols`` float32
values (rows = channels, cols = samples) after a 16-byte header::

    magic b"EEGD" | version u32 | count u32 | rows u16 | cols u16
"""

from __future__ import annotations

import csv
import math
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .arch import ReductionSpec
from .edf import Recording, parse_edf
from .reduction import design_lowpass, reduce_trial

TASK_CLASSES = {2: ("L", "R"), 3: ("L", "R", "0"), 4: ("L", "R", "0", "F")}
LR_RUNS = (4, 8, 12)
BF_RUNS = (6, 10, 14)
BASELINE_RUN = 1
CUE_LABELS = {"lr": {"T1": "L", "T2": "R"}, "bf": {"T1": "B", "T2": "F"}}
EXPECTED_PER_CLASS = 21
TRIAL_SECONDS = 3.0
# Subjects with irregular trial counts/timing; a best guess, override with --exclude.
DEFAULT_EXCLUDE = (88, 92, 100, 104)

TENSOR_MAGIC = b"EEGD"
TENSOR_VERSION = 1
TENSOR_HEADER = struct.Struct("<4sIIHH")


class IngestError(ValueError):
    pass


def task_classes(n_classes: int) -> tuple[str, ...]:
    try:
        return TASK_CLASSES[n_classes]
    except KeyError:
        raise IngestError(f"task must have 2, 3 or 4 classes, got {n_classes}") from None


@dataclass
class Trial:
    subject: int
    run: int
    label: str
    onset: float
    window: np.ndarray  # (channels, samples)


@dataclass
class TrialSet:
    trials: list[Trial]
    channel_labels: list[str]
    fs: float
    counts: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.trials]


def _runs_needed(classes: Sequence[str]) -> dict[int, str]:
    runs = {}
    if "L" in classes or "R" in classes:
        runs.update({r: "lr" for r in LR_RUNS})
    if "F" in classes:
        runs.update({r: "bf" for r in BF_RUNS})
    if "0" in classes:
        runs[BASELINE_RUN] = "rest"
    return runs


def _window(rec: Recording, onset: float, seconds: float, where: str) -> np.ndarray:
    start = int(round(onset * rec.fs))
    n = int(round(seconds * rec.fs))
    if start < 0 or start + n > rec.data.shape[1]:
        raise IngestError(f"{where}: window [{onset}, {onset + seconds}) s exceeds the "
                          f"{rec.data.shape[1] / rec.fs:.2f} s recording")
    return rec.data[:, start:start + n]


def extract_trials(recordings: Mapping[int, Recording], n_classes: int = 4, subject: int = 0,
                   trial_seconds: float = TRIAL_SECONDS) -> TrialSet:
    """Cut labeled cue windows (and rest windows) from one subject's runs."""
    classes = task_classes(n_classes)
    needed = _runs_needed(classes)
    missing = sorted(r for r in needed if r not in recordings)
    if missing:
        raise IngestError(f"subject {subject}: missing run(s) {missing}")

    ref = recordings[next(iter(sorted(needed)))]
    trials: list[Trial] = []
    for run in sorted(needed):
        kind = needed[run]
        rec = recordings[run]
        if rec.labels != ref.labels or rec.fs != ref.fs:
            raise IngestError(f"subject {subject} run {run}: channel layout differs from other runs")
        if kind == "rest":
            continue
        for ann in rec.annotations:
            if ann.text not in ("T0", "T1", "T2"):
                raise IngestError(f"subject {subject} run {run}: unexpected annotation {ann.text!r}")
            if ann.text == "T0":
                continue
            label = CUE_LABELS[kind][ann.text]
            if label not in classes:
                continue
            where = f"subject {subject} run {run}"
            trials.append(Trial(subject, run, label, ann.onset,
                                _window(rec, ann.onset, trial_seconds, where)))

    counts = Counter(t.label for t in trials)
    if "0" in classes:
        rec = recordings[BASELINE_RUN]
        cued = [counts[c] for c in classes if c != "0"]
        n_avail = math.floor(rec.data.shape[1] / round(trial_seconds * rec.fs))
        n_rest = min([n_avail] + cued)
        for i in range(n_rest):
            onset = i * trial_seconds
            trials.append(Trial(subject, BASELINE_RUN, "0", onset,
                                _window(rec, onset, trial_seconds, f"subject {subject} baseline")))
        counts["0"] = n_rest

    trials.sort(key=lambda t: (t.subject, t.run, t.onset))
    counts = {c: counts.get(c, 0) for c in classes}
    flags = [f"subject {subject}: {counts[c]} trials of class {c} (expected {EXPECTED_PER_CLASS})"
             for c in classes if c != "0" and counts[c] != EXPECTED_PER_CLASS]
    return TrialSet(trials, list(ref.labels), ref.fs, counts, flags)


# -- window tensor files ----------------------------------------------------

def write_windows(path: Union[str, Path], windows) -> None:
    w = np.asarray(windows, "<f4")
    if w.ndim != 3:
        raise IngestError(f"expected (count, rows, cols) windows, got shape {w.shape}")
    count, rows, cols = w.shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, count, rows, cols))
        fh.write(np.ascontiguousarray(w).tobytes())


def read_header(path: Union[str, Path]) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(TENSOR_HEADER.size)
    if len(head) < TENSOR_HEADER.size:
        raise IngestError(f"{path}: too short for a window tensor header")
    magic, version, count, rows, cols = TENSOR_HEADER.unpack(head)
    if magic != TENSOR_MAGIC:
        raise IngestError(f"{path}: bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise IngestError(f"{path}: unsupported version {version}")
    return count, rows, cols


def read_windows(path: Union[str, Path]) -> np.ndarray:
    count, rows, cols = read_header(path)
    data = Path(path).read_bytes()[TENSOR_HEADER.size:]
    if len(data) != 4 * count * rows * cols:
        raise IngestError(f"{path}: payload has {len(data)} bytes, header implies {4 * count * rows * cols}")
    return np.frombuffer(data, "<f4").astype(np.float32).reshape(count, rows, cols)


# -- dataset building -------------------------------------------------------

MANIFEST_COLUMNS = ("index", "subject", "run", "label", "onset_s", "byte_offset")


@dataclass
class Manifest:
    rows: list[dict]
    shape: Optional[tuple[int, int]]
    counts: dict
    flags: list[str]

    def write(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, MANIFEST_COLUMNS)
            w.writeheader()
            w.writerows(self.rows)


def read_manifest(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def find_run_file(root: Path, subject: int, run: int) -> Path:
    name = f"S{subject:03d}R{run:02d}.edf"
    for cand in (root / f"S{subject:03d}" / name, root / name):
        if cand.is_file():
            return cand
    raise IngestError(f"recording {name} not found under {root}")


def load_subject(root: Union[str, Path], subject: int, runs: Iterable[int]) -> dict[int, Recording]:
    root = Path(root)
    return {r: parse_edf(find_run_file(root, subject, r)) for r in runs}


def build_dataset(subjects: Sequence[int], n_classes: int = 4,
                  reduction: ReductionSpec = ReductionSpec(),
                  input_dir: Union[str, Path, None] = None,
                  loader: Optional[Callable[[int], Mapping[int, Recording]]] = None,
                  exclude: Iterable[int] = DEFAULT_EXCLUDE,
                  out_prefix: Union[str, Path, None] = None, jobs: int = 1):
    """Extract, reduce and stack trials for several subjects.

    Either ``input_dir`` (a directory of ``SxxxRyy.edf`` files) or ``loader``
    (subject id -> {run: Recording}) supplies the recordings. Returns
    ``(manifest, windows)``; with ``out_prefix`` also writes
    ``<prefix>.csv`` and ``<prefix>.bin``.
    """
    classes = task_classes(n_classes)
    excluded = set(exclude)
    chosen = sorted(s for s in set(subjects) if s not in excluded)
    runs = sorted(_runs_needed(classes))
    if loader is None:
        if input_dir is None and chosen:
            raise IngestError("need an input directory or a recording loader")
        loader = lambda s: load_subject(input_dir, s, runs)  # noqa: E731
    subset = reduction.subset()

    def one(subject):
        ts = extract_trials(loader(subject), n_classes, subject)
        if reduction.window_seconds > TRIAL_SECONDS:
            raise IngestError(f"window {reduction.window_seconds} s exceeds the {TRIAL_SECONDS} s trial")
        fir = design_lowpass(reduction.ds, ts.fs)
        wins = [reduce_trial(t.window, ts.channel_labels, reduction.ds, subset,
                             reduction.window_seconds, ts.fs, fir=fir) for t in ts.trials]
        return ts, wins

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, chosen))
    else:
        results = [one(s) for s in chosen]

    rows, windows, flags = [], [], []
    counts = Counter()
    for ts, wins in results:
        flags.extend(ts.flags)
        counts.update(ts.counts)
        for t, w in zip(ts.trials, wins):
            windows.append(w)
    shapes = {w.shape for w in windows}
    if len(shapes) > 1:
        raise IngestError(f"reduced windows have inconsistent shapes {sorted(shapes)}")
    shape = shapes.pop() if shapes else None
    per = 4 * shape[0] * shape[1] if shape else 0
    i = 0
    for ts, _ in results:
        for t in ts.trials:
            rows.append({"index": i, "subject": t.subject, "run": t.run, "label": t.label,
                         "onset_s": f"{t.onset:g}", "byte_offset": TENSOR_HEADER.size + i * per})
            i += 1
    stacked = np.stack(windows).astype(np.float32) if windows else np.zeros((0, 0, 0), np.float32)
    manifest = Manifest(rows, shape, {c: counts.get(c, 0) for c in classes}, flags)
    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        manifest.write(out_prefix.with_suffix(".csv"))
        write_windows(out_prefix.with_suffix(".bin"), stacked)
    return manifest, stacked
