import numpy as np
import pytest

from synth import make_run, make_subject, run_annotations, write_subject
from tinyeegnet.arch import ReductionSpec
from tinyeegnet.edf import Annotation
from tinyeegnet.ingest import (DEFAULT_EXCLUDE, IngestError, build_dataset, extract_trials, read_header,
                               read_manifest, read_windows, write_windows)


@pytest.fixture(scope="module")
def subject():
    return make_subject(seed=5)


def test_standard_subject_has_21_per_class(subject):
    ts = extract_trials(subject, 4, subject=1)
    # a 61 s baseline run holds only 20 disjoint 3 s windows
    assert ts.counts == {"L": 21, "R": 21, "0": 20, "F": 21}
    assert ts.flags == []
    assert {t.window.shape for t in ts.trials} == {(64, 480)}


def test_two_class_labels(subject):
    ts = extract_trials(subject, 2)
    assert set(ts.labels) <= {"L", "R"}
    assert ts.counts == {"L": 21, "R": 21}


def test_three_cues_per_run():
    recs = make_subject(seed=1, n_per_class=3, runs=(4, 8, 12))
    ts = extract_trials(recs, 2)
    assert ts.counts == {"L": 9, "R": 9}
    assert len(ts.flags) == 2 and "9 trials of class L" in ts.flags[0]


def test_rest_windows_capped_and_disjoint():
    recs = make_subject(seed=2, n_per_class=3)
    ts = extract_trials(recs, 3)
    rest = sorted(t.onset for t in ts.trials if t.label == "0")
    assert len(rest) == 9
    assert all(b - a >= 3.0 for a, b in zip(rest, rest[1:]))
    short = make_subject(seed=2, n_per_class=3, baseline_seconds=12)
    assert extract_trials(short, 3).counts["0"] == 4


def test_onsets_come_from_cue_annotations(subject):
    ts = extract_trials(subject, 4)
    for t in ts.trials:
        if t.label == "0":
            continue
        cues = {(a.onset, a.text) for a in subject[t.run].annotations}
        assert (t.onset, "T1") in cues or (t.onset, "T2") in cues
        start = round(t.onset * 160)
        np.testing.assert_array_equal(t.window, subject[t.run].data[:, start:start + 480])


def test_trials_sorted(subject):
    keys = [(t.run, t.onset) for t in extract_trials(subject, 4).trials]
    assert keys == sorted(keys)


def test_missing_run(subject):
    recs = {k: v for k, v in subject.items() if k != 8}
    with pytest.raises(IngestError, match=r"missing run\(s\) \[8\]"):
        extract_trials(recs, 2)


def test_bad_annotation():
    ann, length = run_annotations(2)
    ann[1] = Annotation(ann[1].onset, 4.1, "T7")
    recs = make_subject(seed=3, n_per_class=2, runs=(8, 12))
    recs[4] = make_run(np.random.default_rng(0), length, ann)[0]
    with pytest.raises(IngestError, match="'T7'"):
        extract_trials(recs, 2)


def test_cue_past_end():
    ann, length = run_annotations(2)
    ann.append(Annotation(length - 1.0, 4.1, "T1"))
    recs = make_subject(seed=3, n_per_class=2, runs=(8, 12))
    recs[4] = make_run(np.random.default_rng(0), length, ann)[0]
    with pytest.raises(IngestError, match="exceeds"):
        extract_trials(recs, 2)


def test_bad_task():
    with pytest.raises(IngestError):
        extract_trials({}, 5)


def test_build_empty():
    manifest, windows = build_dataset([], 4)
    assert manifest.rows == [] and len(windows) == 0


def test_default_exclusion_applied(subject):
    manifest, _ = build_dataset([DEFAULT_EXCLUDE[0]], 2, loader=lambda s: subject)
    assert manifest.rows == []


@pytest.mark.parametrize("red, shape", [
    (ReductionSpec(1, "all64", 3.0), (64, 480)),
    (ReductionSpec(3, "reduced38", 1.0), (38, 53)),
])
def test_build_shapes(subject, red, shape):
    manifest, windows = build_dataset([1], 4, red, loader=lambda s: subject)
    assert windows.shape == (83,) + shape
    assert manifest.shape == shape
    assert manifest.counts == {"L": 21, "R": 21, "0": 20, "F": 21}


def test_build_from_directory_writes_files(tmp_path):
    write_subject(tmp_path / "data", 7, n_per_class=2)
    write_subject(tmp_path / "data", 3, n_per_class=2)
    prefix = tmp_path / "out" / "ds"
    prefix.parent.mkdir()
    manifest, windows = build_dataset([7, 3], 2, ReductionSpec(3, "reduced38", 1.0),
                                      input_dir=tmp_path / "data", out_prefix=prefix, jobs=2)
    rows = read_manifest(prefix.with_suffix(".csv"))
    assert [int(r["subject"]) for r in rows] == [3] * 12 + [7] * 12
    assert read_header(prefix.with_suffix(".bin")) == (24, 38, 53)
    stored = read_windows(prefix.with_suffix(".bin"))
    np.testing.assert_array_equal(stored, windows)
    raw = prefix.with_suffix(".bin").read_bytes()
    off = int(rows[5]["byte_offset"])
    np.testing.assert_array_equal(np.frombuffer(raw[off:off + 4 * 38 * 53], "<f4").reshape(38, 53),
                                  windows[5])


def test_build_missing_file(tmp_path):
    with pytest.raises(IngestError, match="not found"):
        build_dataset([1], 2, input_dir=tmp_path)


def test_window_file_errors(tmp_path):
    p = tmp_path / "w.bin"
    write_windows(p, np.zeros((2, 3, 4)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(IngestError, match="payload"):
        read_windows(p)
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(IngestError, match="magic"):
        read_windows(p)
