import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from tinyeegnet.arch import model1_config
from tinyeegnet.engine import infer, random_weights
from tinyeegnet.estimators import EEGNetClassifier, ReductionTransformer


def test_transformer_model1_shape(rng):
    X = rng.normal(size=(3, 64, 480))
    out = ReductionTransformer(ds=3, channels="reduced38", window_seconds=1.0).fit_transform(X)
    assert out.shape == (3, 38, 53) and out.dtype == np.float32


def test_transformer_params_roundtrip():
    t = ReductionTransformer(ds=2, channels="standard19", window_seconds=2.0)
    assert t.get_params()["ds"] == 2
    assert clone(t).get_params() == t.get_params()
    t.set_params(ds=3)
    assert t.ds == 3


def test_transformer_errors(rng):
    with pytest.raises(NotFittedError):
        ReductionTransformer().transform(rng.normal(size=(1, 64, 480)))
    with pytest.raises(ValueError, match="channels"):
        ReductionTransformer().fit(rng.normal(size=(1, 10, 480)))
    t = ReductionTransformer().fit(rng.normal(size=(1, 64, 480)))
    with pytest.raises(ValueError):
        t.transform(rng.normal(size=(1, 64, 400)))


def test_pipeline_matches_engine(rng):
    cfg = model1_config()
    w = random_weights(cfg, rng)
    pipe = make_pipeline(ReductionTransformer(ds=3, channels="reduced38", window_seconds=1.0),
                         EEGNetClassifier(weights=(w, cfg)))
    X = rng.normal(size=(4, 64, 480))
    pipe.fit(X)
    proba = pipe.predict_proba(X)
    reduced = pipe[0].transform(X)
    for i in range(4):
        np.testing.assert_allclose(proba[i], infer(reduced[i].T, w, cfg)[0], rtol=1e-5, atol=1e-7)
    assert set(pipe.predict(X)) <= {"L", "R", "0", "F"}


def test_classifier_from_bundle(data_dir):
    clf = EEGNetClassifier(weights=str(data_dir / "model1_fixture.eegw")).fit()
    from tinyeegnet.ingest import read_windows
    X = read_windows(data_dir / "model1_windows.bin")
    assert list(np.argmax(clf.predict_proba(X), 1)) == [0, 0, 0, 0, 3, 2, 0, 0]
    assert clf.get_params()["fold_bn"] is True


def test_classifier_errors(rng):
    with pytest.raises(ValueError, match="pretrained"):
        EEGNetClassifier().fit()
    with pytest.raises(NotFittedError):
        EEGNetClassifier(weights="x").predict(np.zeros((1, 38, 53)))
    cfg = model1_config()
    clf = EEGNetClassifier(weights=(random_weights(cfg, 0), cfg)).fit()
    with pytest.raises(ValueError, match="expects"):
        clf.predict(np.zeros((1, 38, 50)))
    with pytest.raises(ValueError, match="class labels"):
        EEGNetClassifier(weights=(random_weights(cfg, 0), cfg), classes=["a", "b"]).fit()
