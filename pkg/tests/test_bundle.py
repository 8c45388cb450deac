import io
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinyeegnet.arch import EEGNetConfig, model1_config, model2_config, standard_config
from tinyeegnet.bundle import (BadMagicError, BundleError, CrcError, SizeError, UnsupportedVersionError,
                               bundle_size, decode_bundle, describe_header, encode_bundle, load_bundle,
                               save_bundle)
from tinyeegnet.engine import infer, random_weights


def _tensors_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a.tensors(), b.tensors()))


def test_model1_bundle_size():
    assert bundle_size(model1_config()) == 22 + 4 * 1756 + 4
    data = encode_bundle(random_weights(model1_config(), 0), model1_config())
    assert len(data) == 7050


@pytest.mark.parametrize("make", [standard_config, model1_config, model2_config])
def test_roundtrip_bit_exact(make, tmp_path):
    cfg = make()
    w = random_weights(cfg, 3)
    path = tmp_path / "w.eegw"
    assert save_bundle(w, cfg, path) == bundle_size(cfg)
    w2, cfg2 = load_bundle(path)
    assert cfg2 == cfg
    assert _tensors_equal(w, w2)
    assert encode_bundle(w2, cfg2) == path.read_bytes()


def test_roundtrip_stream_and_folded():
    cfg = model1_config()
    w = random_weights(cfg, 4).fold()
    buf = io.BytesIO()
    save_bundle(w, cfg, buf)
    buf.seek(0)
    w2, _ = load_bundle(buf)
    assert w2.folded and _tensors_equal(w, w2)
    assert describe_header(buf.getvalue())["folded"]


def test_fold_on_load_matches_inference(rng):
    cfg = model1_config()
    data = encode_bundle(random_weights(cfg, rng), cfg)
    plain, _ = decode_bundle(data)
    folded, _ = decode_bundle(data, fold_bn=True)
    for _ in range(5):
        x = rng.normal(size=(cfg.n_samples, cfg.n_channels)).astype(np.float32)
        p, _ = infer(x, plain, cfg)
        q, _ = infer(x, folded, cfg)
        np.testing.assert_allclose(p, q, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("cut", [0, 10, 21, 22, 100, 7045, 7049])
def test_truncation_is_size_error(cut):
    data = encode_bundle(random_weights(model1_config(), 0), model1_config())
    with pytest.raises(SizeError):
        decode_bundle(data[:cut])


def test_extra_bytes_rejected():
    data = encode_bundle(random_weights(model1_config(), 0), model1_config())
    body = data[:-4] + b"\0\0\0\0"
    with pytest.raises(SizeError):
        decode_bundle(body + struct.pack("<I", zlib.crc32(body)))


def test_bad_magic():
    data = bytearray(encode_bundle(random_weights(model1_config(), 0), model1_config()))
    data[0:4] = b"EEGX"
    with pytest.raises(BadMagicError):
        decode_bundle(bytes(data))


def test_bad_version_with_valid_crc():
    data = bytearray(encode_bundle(random_weights(model1_config(), 0), model1_config()))
    data[4:6] = struct.pack("<H", 2)
    body = bytes(data[:-4])
    with pytest.raises(UnsupportedVersionError):
        decode_bundle(body + struct.pack("<I", zlib.crc32(body)))


def test_inconsistent_header_with_valid_crc():
    data = bytearray(encode_bundle(random_weights(model1_config(), 0), model1_config()))
    data[14:16] = struct.pack("<H", 40)  # N_f no longer matches ds
    body = bytes(data[:-4])
    with pytest.raises(BundleError, match="inconsistent header"):
        decode_bundle(body + struct.pack("<I", zlib.crc32(body)))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_single_byte_corruption_detected(data):
    raw = encode_bundle(random_weights(model1_config(), 0), model1_config())
    pos = data.draw(st.integers(0, len(raw) - 1))
    flip = data.draw(st.integers(1, 255))
    bad = bytearray(raw)
    bad[pos] ^= flip
    # header damage may surface as a magic or size error; payload damage is always a CRC error
    with pytest.raises(CrcError if pos >= 22 else BundleError):
        decode_bundle(bytes(bad))


def test_encode_rejects_mismatched_weights():
    with pytest.raises(BundleError):
        encode_bundle(random_weights(model1_config(), 0), model2_config())


def test_small_config_roundtrip():
    cfg = EEGNetConfig.from_ds(16, 2, 2, ds=8)
    w = random_weights(cfg, 9)
    w2, cfg2 = decode_bundle(encode_bundle(w, cfg))
    assert cfg2 == cfg and _tensors_equal(w, w2)
