import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conductor_motion.audio_features import Waveform
from conductor_motion.estimators import AudioFeatureExtractor, CorrespondenceNet, MotionGenerator
from conductor_motion.exceptions import InvalidInputError, ShapeError
from conductor_motion.motion_data import synth_audio


def test_feature_extractor_transform():
    x, _ = synth_audio(10.0, 100, 0.3, np.random.default_rng(0))
    ext = AudioFeatureExtractor().fit()
    (f,) = ext.transform([Waveform(x, 22050)])
    (g,) = ext.transform([x])
    assert f.shape == (300, 24) and np.array_equal(f, g)
    assert ext.n_features_out_ == 24
    with pytest.raises(NotFittedError):
        AudioFeatureExtractor().transform([x])


def test_params_and_clone():
    net = CorrespondenceNet(d_feat=8, iterations=3)
    assert net.get_params()["d_feat"] == 8
    c = clone(net)
    assert c.get_params() == net.get_params() and c is not net
    assert clone(MotionGenerator(iterations=2)).get_params()["iterations"] == 2


def test_fit_predict_tiny(small_synth):
    corpus = small_synth[0]
    net = CorrespondenceNet(d_feat=8, n_layers=2, kernel=3, d_hidden=8, iterations=4, batch=4)
    with pytest.raises(NotFittedError):
        net.predict(np.zeros((1, 60, 24)), np.zeros((1, 60, 26)))
    net.fit(corpus.features, corpus.motions)
    x, y = corpus.features[0][None, :60], corpus.motions[0][None, :60]
    proba = net.predict_proba(x, y)
    assert proba.shape == (1, 2) and np.allclose(proba.sum(axis=1), 1)
    assert net.predict(x, y).shape == (1,)
    assert 0 <= net.score(x, y, [1]) <= 1
    assert net.transform_motion(y).shape == (1, 8)
    gen = MotionGenerator(net, iterations=2, batch=2, n_critic=1)
    gen.fit(corpus.features, corpus.motions)
    pred = gen.predict(corpus.features[1])
    assert pred.shape == (len(corpus.features[1]), 26)
    assert np.isfinite(gen.score(corpus.features[1], corpus.motions[1]))


def test_estimator_input_checks():
    with pytest.raises(ShapeError):
        CorrespondenceNet(iterations=1).fit([np.zeros((100, 24))], [])
    with pytest.raises(InvalidInputError):
        MotionGenerator(None, iterations=1).fit([np.zeros((100, 24))], [np.zeros((100, 26))])
