"""EDF / EDF+ reading (and writing, for fixtures and tests).

Only what the motor-imagery recordings need: continuous records, 16-bit
samples, one optional ``EDF Annotations`` signal holding time-stamped
annotation lists (TALs).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

ANNOTATION_LABEL = "EDF Annotations"
_FIXED = (("version", 8), ("patient", 80), ("recording", 80), ("startdate", 8),
          ("starttime", 8), ("header_bytes", 8), ("reserved", 44), ("n_records", 8),
          ("record_duration", 8), ("n_signals", 4))
_PER_SIGNAL = (("label", 16), ("transducer", 80), ("unit", 8), ("phys_min", 8),
               ("phys_max", 8), ("dig_min", 8), ("dig_max", 8), ("prefilter", 80),
               ("samples_per_record", 8), ("reserved", 32))


class EdfError(ValueError):
    pass


@dataclass(frozen=True)
class Annotation:
    onset: float
    duration: Optional[float]
    text: str


@dataclass
class SignalHeader:
    label: str
    unit: str
    phys_min: float
    phys_max: float
    dig_min: int
    dig_max: int
    samples_per_record: int
    transducer: str = ""
    prefilter: str = ""

    @property
    def gain(self) -> float:
        return (self.phys_max - self.phys_min) / (self.dig_max - self.dig_min)

    def to_physical(self, digital) -> np.ndarray:
        d = np.asarray(digital, np.float64)
        return (d - self.dig_min) * self.gain + self.phys_min


@dataclass
class Recording:
    """Decoded EDF file: physical-unit samples plus annotations.

    ``data`` is (n_signals, n_samples) for the ordinary (non-annotation)
    signals, in the order they appear in the file.
    """

    signals: list[SignalHeader]
    record_duration: float
    n_records: int
    data: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)
    patient: str = ""
    recording_id: str = ""
    startdate: str = ""
    starttime: str = ""
    digital: Optional[np.ndarray] = None

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]

    @property
    def fs(self) -> float:
        return self.signals[0].samples_per_record / self.record_duration

    @property
    def duration(self) -> float:
        return self.n_records * self.record_duration


def _field(raw: bytes, name: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise EdfError(f"header field {name!r} is not ASCII") from exc


def _number(text: str, name: str, integer: bool = False):
    try:
        v = float(text)
    except ValueError:
        raise EdfError(f"header field {name!r} is not a number: {text!r}") from None
    if integer:
        if v != int(v):
            raise EdfError(f"header field {name!r} must be an integer: {text!r}")
        return int(v)
    return v


def _parse_tals(raw: bytes) -> list[Annotation]:
    out = []
    for tal in raw.split(b"\x00"):
        if not tal:
            continue
        parts = tal.split(b"\x14")
        stamp = parts[0].decode("latin-1")
        if "\x15" in stamp:
            onset_s, dur_s = stamp.split("\x15", 1)
            duration = float(dur_s) if dur_s else None
        else:
            onset_s, duration = stamp, None
        try:
            onset = float(onset_s)
        except ValueError:
            raise EdfError(f"bad TAL onset {onset_s!r}") from None
        for text in parts[1:]:
            text = text.decode("utf-8")
            if text:
                out.append(Annotation(onset, duration, text))
    return out


def parse_edf(src: Union[str, Path, BinaryIO, bytes]) -> Recording:
    """Read an EDF or EDF+ (continuous) file."""
    if isinstance(src, (bytes, bytearray)):
        data = bytes(src)
    elif isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
    else:
        data = src.read()
    if len(data) < 256:
        raise EdfError("file shorter than the 256-byte EDF header")

    pos, head = 0, {}
    for name, width in _FIXED:
        head[name] = _field(data[pos:pos + width], name)
        pos += width
    ns = _number(head["n_signals"], "n_signals", integer=True)
    if ns < 1:
        raise EdfError("EDF file declares no signals")
    header_bytes = 256 + 256 * ns
    if len(data) < header_bytes:
        raise EdfError(f"header truncated: need {header_bytes} bytes, have {len(data)}")
    declared = _number(head["header_bytes"], "header_bytes", integer=True)
    if declared != header_bytes:
        raise EdfError(f"header size field says {declared}, {ns} signals imply {header_bytes}")

    cols = {}
    for name, width in _PER_SIGNAL:
        cols[name] = [_field(data[pos + i * width:pos + (i + 1) * width], name) for i in range(ns)]
        pos += width * ns

    headers = []
    for i in range(ns):
        h = SignalHeader(
            label=cols["label"][i], unit=cols["unit"][i],
            phys_min=_number(cols["phys_min"][i], "phys_min"),
            phys_max=_number(cols["phys_max"][i], "phys_max"),
            dig_min=_number(cols["dig_min"][i], "dig_min", integer=True),
            dig_max=_number(cols["dig_max"][i], "dig_max", integer=True),
            samples_per_record=_number(cols["samples_per_record"][i], "samples_per_record", integer=True),
            transducer=cols["transducer"][i], prefilter=cols["prefilter"][i])
        if h.dig_max <= h.dig_min:
            raise EdfError(f"signal {h.label!r}: digital max must exceed digital min")
        if h.samples_per_record < 1:
            raise EdfError(f"signal {h.label!r}: samples per record must be positive")
        headers.append(h)

    duration = _number(head["record_duration"], "record_duration")
    spr = np.array([h.samples_per_record for h in headers])
    record_bytes = 2 * int(spr.sum())
    body = len(data) - header_bytes
    n_records = _number(head["n_records"], "n_records", integer=True)
    if n_records == -1:
        if body % record_bytes:
            raise EdfError(f"data section of {body} bytes is not a whole number of records")
        n_records = body // record_bytes
    if body < n_records * record_bytes:
        raise EdfError(f"data truncated in record {body // record_bytes} "
                       f"(have {body} of {n_records * record_bytes} bytes)")

    raw = np.frombuffer(data, "<i2", count=n_records * record_bytes // 2, offset=header_bytes)
    raw = raw.reshape(n_records, -1)
    bounds = np.concatenate([[0], np.cumsum(spr)])
    is_ann = [h.label == ANNOTATION_LABEL for h in headers]
    ordinary = [h for h, a in zip(headers, is_ann) if not a]
    if len({h.samples_per_record for h in ordinary}) > 1:
        raise EdfError("signals with differing sampling rates are not supported")

    digital, annotations = [], []
    for i, h in enumerate(headers):
        block = raw[:, bounds[i]:bounds[i + 1]]
        if is_ann[i]:
            for r in range(n_records):
                annotations.extend(_parse_tals(block[r].tobytes()))
        else:
            digital.append(block.reshape(-1))
    digital = np.array(digital, dtype=np.int16).reshape(len(ordinary), -1)
    phys = np.stack([h.to_physical(d) for h, d in zip(ordinary, digital)]) if ordinary else np.zeros((0, 0))
    annotations.sort(key=lambda a: a.onset)
    return Recording(ordinary, duration, n_records, phys, annotations,
                     patient=head["patient"], recording_id=head["recording"],
                     startdate=head["startdate"], starttime=head["starttime"], digital=digital)


# -- writer -----------------------------------------------------------------

def _fmt(value, width: int) -> bytes:
    if isinstance(value, float):
        text = repr(value)
        precision = width
        while len(text) > width and precision > 0:
            text = f"{value:.{precision}g}"
            precision -= 1
        if text.endswith(".0"):
            text = text[:-2]
    else:
        text = str(value)
    if len(text) > width:
        raise EdfError(f"value {text!r} longer than {width} characters")
    return text.ljust(width).encode("ascii")


def _tal(onset: float, duration: Optional[float], texts: Sequence[str]) -> bytes:
    stamp = f"{onset:+.4f}".rstrip("0").rstrip(".")
    if duration is not None:
        stamp += "\x15" + f"{duration:.4f}".rstrip("0").rstrip(".")
    return stamp.encode("latin-1") + b"\x14" + b"".join(t.encode("utf-8") + b"\x14" for t in texts) + b"\x00"


def write_edf(dest: Union[str, Path, BinaryIO, None], signals, fs: float, labels: Sequence[str],
              phys_min=-3276.8, phys_max=3276.7, dig_min: int = -32768, dig_max: int = 32767,
              annotations: Sequence[Annotation] = (), record_duration: float = 1.0,
              unit: str = "uV", digital: bool = False, patient: str = "X X X X",
              recording: str = "Startdate 01-JAN-2009 X X BCI2000") -> bytes:
    """Write an EDF+ file; returns the bytes (also written to ``dest`` if given).

    ``signals`` is (n_signals, n_samples). With ``digital=True`` the values
    are stored as-is, otherwise they are quantized from physical units.
    ``phys_*``/``dig_*`` may be scalars or per-signal sequences.
    """
    x = np.asarray(signals)
    n_sig, n_samp = x.shape
    spr = fs * record_duration
    if spr != int(spr):
        raise EdfError("fs * record_duration must be an integer")
    spr = int(spr)
    n_records = math.ceil(n_samp / spr)
    if n_samp != n_records * spr:
        raise EdfError(f"{n_samp} samples is not a whole number of {spr}-sample records")

    def per(v):
        return list(v) if np.ndim(v) else [v] * n_sig
    pmin, pmax, dmin, dmax = per(phys_min), per(phys_max), per(dig_min), per(dig_max)
    # quantize using the values exactly as they will be parsed back
    heads = [SignalHeader(str(labels[i]), unit, float(_fmt(float(pmin[i]), 8)),
                          float(_fmt(float(pmax[i]), 8)), int(dmin[i]), int(dmax[i]), spr)
             for i in range(n_sig)]
    if digital:
        dig = x.astype(np.int64)
    else:
        dig = np.stack([np.rint((x[i] - h.phys_min) / h.gain + h.dig_min) for i, h in enumerate(heads)])
    dig = np.clip(dig, np.array(dmin)[:, None], np.array(dmax)[:, None]).astype("<i2")

    # annotation records: one time-keeping TAL per record plus the annotations starting in it
    per_record = [[_tal(r * record_duration, None, [""])] for r in range(n_records)]
    for a in annotations:
        r = min(int(a.onset // record_duration), n_records - 1)
        per_record[r].append(_tal(a.onset, a.duration, [a.text]))
    ann_bytes = [b"".join(p) for p in per_record]
    ann_spr = max(30, (max(len(b) for b in ann_bytes) + 1) // 2)

    all_heads = heads + [SignalHeader(ANNOTATION_LABEL, "", -1.0, 1.0, -32768, 32767, ann_spr)]
    ns = len(all_heads)
    out = io.BytesIO()
    out.write(_fmt("0", 8) + _fmt(patient, 80) + _fmt(recording, 80) + _fmt("01.01.09", 8)
              + _fmt("00.00.00", 8) + _fmt(256 + 256 * ns, 8) + _fmt("EDF+C", 44)
              + _fmt(n_records, 8) + _fmt(float(record_duration), 8) + _fmt(ns, 4))
    cols = (
        [_fmt(h.label, 16) for h in all_heads],
        [_fmt(h.transducer, 80) for h in all_heads],
        [_fmt(h.unit, 8) for h in all_heads],
        [_fmt(h.phys_min, 8) for h in all_heads],
        [_fmt(h.phys_max, 8) for h in all_heads],
        [_fmt(h.dig_min, 8) for h in all_heads],
        [_fmt(h.dig_max, 8) for h in all_heads],
        [_fmt(h.prefilter, 80) for h in all_heads],
        [_fmt(h.samples_per_record, 8) for h in all_heads],
        [_fmt("", 32) for h in all_heads],
    )
    for col in cols:
        out.write(b"".join(col))
    for r in range(n_records):
        out.write(dig[:, r * spr:(r + 1) * spr].tobytes())
        out.write(ann_bytes[r].ljust(2 * ann_spr, b"\x00"))
    result = out.getvalue()
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(result)
    elif dest is not None:
        dest.write(result)
    return result
