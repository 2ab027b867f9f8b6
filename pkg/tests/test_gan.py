import math
import struct

import numpy as np
import pytest
from sklearn.base import clone

from _helpers import gradcheck_errors
from gangmam.apk import sha256_hex
from gangmam.detector import synth_corpus, train_logistic
from gangmam.errors import (
    BadConfig,
    BadMagic,
    EmptyCorpus,
    ModelFormatError,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from gangmam.features import FeatureVector
from gangmam.gan import (
    EvasionGan,
    GanConfig,
    GanModel,
    generator_forward,
    init_gan,
    model_load,
    model_save,
    perturb,
    perturb_matrix,
    substitute_forward,
    substitute_loss_and_grads,
    train_gan,
    train_matrices,
)
from gangmam.nn import DenseNet

HASH = sha256_hex(b"gan-test")


class ConstantDetector:
    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(len(X), self.label, dtype=int)


def small_model(**overrides) -> GanModel:
    config = GanConfig(
        noise_dim=3, gen_hidden=(5,), sub_hidden=(4,), seed=overrides.pop("seed", 9),
        **overrides,
    )
    return init_gan(6, config)


# ---- config / init ---------------------------------------------------------

def test_config_defaults_match_contract():
    config = GanConfig()
    assert config.noise_dim == 10
    assert config.gen_hidden == (128,)
    assert config.sub_hidden == (128,)
    assert config.learning_rate == 0.001
    assert config.binarize_threshold == 0.5


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(epochs=0),
        dict(noise_dim=0),
        dict(batch_size=0),
        dict(binarize_threshold=0.0),
        dict(binarize_threshold=1.0),
        dict(learning_rate=0.0),
        dict(gen_hidden=(0,)),
        dict(seed=-1),
    ],
)
def test_bad_config_rejected(kwargs):
    with pytest.raises(BadConfig):
        GanConfig(**kwargs)


def test_init_shapes():
    model = init_gan(64, GanConfig(noise_dim=10, gen_hidden=(128,), sub_hidden=(128,)))
    assert model.generator.sizes == (74, 128, 64)
    assert model.substitute.sizes == (64, 128, 1)


def test_init_deterministic():
    a = small_model()
    b = small_model()
    for wa, wb in zip(a.generator.weights, b.generator.weights):
        assert np.array_equal(wa, wb)
    for wa, wb in zip(a.substitute.weights, b.substitute.weights):
        assert np.array_equal(wa, wb)
    assert model_save(a) == model_save(b)


def test_init_rejects_bad_dim():
    with pytest.raises(BadConfig):
        init_gan(0, GanConfig())


# ---- forward passes --------------------------------------------------------

def zeroed(model: GanModel) -> GanModel:
    for net in (model.generator, model.substitute):
        for w, b in zip(net.weights, net.biases):
            w[...] = 0.0
            b[...] = 0.0
    return model


def test_zero_weights_give_half_everywhere():
    model = zeroed(small_model())
    v = FeatureVector(HASH, bytes([0, 1, 0, 1, 0, 0]))
    noise = np.zeros(3)
    assert np.allclose(generator_forward(model, v, noise), 0.5)
    assert substitute_forward(model, v) == pytest.approx(0.5)


def test_forward_deterministic_repeat():
    model = small_model()
    v = FeatureVector(HASH, bytes([1, 0, 0, 1, 1, 0]))
    noise = np.random.default_rng(1).uniform(size=3)
    assert np.array_equal(generator_forward(model, v, noise), generator_forward(model, v, noise))
    assert substitute_forward(model, v) == substitute_forward(model, v)


def test_hand_computed_hidden_forward():
    # substitute with a 2x2 hidden layer, checked against pencil-and-paper math
    model = small_model()
    sub = DenseNet(
        [np.array([[0.5, -0.25], [0.75, 0.1]]), np.array([[0.3], [-0.4]])],
        [np.array([0.1, -0.2]), np.array([0.05])],
    )
    model = GanModel(2, DenseNet.init((5, 2), np.random.default_rng(0)), sub, GanConfig(noise_dim=3))
    v = FeatureVector(HASH, bytes([1, 0]))
    a1 = math.tanh(1 * 0.5 + 0 * 0.75 + 0.1)
    a2 = math.tanh(1 * -0.25 + 0 * 0.1 - 0.2)
    z = 0.3 * a1 - 0.4 * a2 + 0.05
    expected = 1.0 / (1.0 + math.exp(-z))
    assert substitute_forward(model, v) == pytest.approx(expected, rel=1e-12)


def test_substitute_closed_form_logistic():
    # no hidden layer: the substitute is exactly sigmoid(w . v + b)
    gen = DenseNet.init((6, 3), np.random.default_rng(0))
    sub = DenseNet([np.array([[3.0], [-2.0], [0.5]])], [np.array([0.25])])
    model = GanModel(3, gen, sub, GanConfig(noise_dim=3, sub_hidden=()))
    v = FeatureVector(HASH, bytes([1, 1, 0]))
    expected = 1.0 / (1.0 + math.exp(-(3.0 - 2.0 + 0.25)))
    assert substitute_forward(model, v) == pytest.approx(expected, rel=1e-12)


def test_shape_mismatch_rejected():
    model = small_model()
    v = FeatureVector(HASH, bytes([1, 0, 1]))
    with pytest.raises(ShapeMismatch):
        substitute_forward(model, v)
    good = FeatureVector(HASH, bytes([1, 0, 1, 0, 0, 0]))
    with pytest.raises(ShapeMismatch):
        generator_forward(model, good, np.zeros(5))


# ---- perturb ---------------------------------------------------------------

def saturated_generator(model: GanModel, level: float) -> GanModel:
    # force the generator's output pre-activation to a fixed value
    last = len(model.generator.weights) - 1
    model.generator.weights[last][...] = 0.0
    model.generator.biases[last][...] = level
    return model


def test_perturb_identity_when_generator_emits_zero():
    model = saturated_generator(small_model(), -50.0)
    v = FeatureVector(HASH, bytes([1, 0, 1, 0, 0, 1]))
    assert perturb(model, v, np.zeros(3)) == v


def test_perturb_all_ones_when_generator_saturates():
    model = saturated_generator(small_model(), +50.0)
    v = FeatureVector(HASH, bytes([0, 0, 1, 0, 0, 0]))
    assert perturb(model, v, np.zeros(3)).bits == bytes([1] * 6)


def test_perturb_keeps_hash():
    model = small_model()
    v = FeatureVector(HASH, bytes([0, 1, 0, 0, 0, 0]))
    assert perturb(model, v, np.zeros(3)).apk_hash == HASH


def test_perturb_or_dominates_random_sweep():
    rng = np.random.default_rng(17)
    for trial in range(20):
        config = GanConfig(
            noise_dim=int(rng.integers(1, 5)),
            gen_hidden=(int(rng.integers(2, 10)),),
            sub_hidden=(4,),
            seed=int(rng.integers(0, 2 ** 32)),
        )
        dims = int(rng.integers(2, 12))
        model = init_gan(dims, config)
        V = (rng.random((50, dims)) < 0.4).astype(float)
        Z = rng.uniform(size=(50, config.noise_dim))
        out = perturb_matrix(model, V, Z)
        assert np.all(out >= V)


# ---- gradients -------------------------------------------------------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(23)
    model = init_gan(7, GanConfig(noise_dim=3, gen_hidden=(5,), sub_hidden=(6,), seed=11))
    X = (rng.random((9, 7)) < 0.5).astype(float)
    y = (rng.random(9) < 0.5).astype(float)
    Z = rng.uniform(size=(9, 3))
    sub_err, gen_err = gradcheck_errors(model, X, y, Z)
    assert sub_err < 1e-4
    assert gen_err < 1e-4


# ---- training --------------------------------------------------------------

def corpus_matrices(dims=6, n=12, seed=3):
    rng = np.random.default_rng(seed)
    malware = (rng.random((n, dims)) < 0.3).astype(float)
    benign = (rng.random((n, dims)) < 0.6).astype(float)
    return malware, benign


def test_vacuous_detector_gives_full_evasion_at_epoch_one():
    malware, benign = corpus_matrices()
    model = small_model(epochs=3)
    _, report = train_matrices(model, malware, benign, ConstantDetector(0))
    assert report.epochs[0].evasion_rate == 1.0


def test_all_malicious_detector_gives_zero_evasion_every_epoch():
    malware, benign = corpus_matrices()
    model = small_model(epochs=4)
    _, report = train_matrices(model, malware, benign, ConstantDetector(1))
    assert [r.evasion_rate for r in report.epochs] == [0.0] * 4


def test_training_rejects_empty_corpus():
    malware, _ = corpus_matrices()
    with pytest.raises(EmptyCorpus):
        train_matrices(small_model(), malware, np.zeros((0, 6)), ConstantDetector(0))


def test_training_rejects_wrong_width():
    malware, benign = corpus_matrices(dims=5)
    with pytest.raises(ShapeMismatch):
        train_matrices(small_model(), malware, benign, ConstantDetector(0))


def test_training_deterministic():
    corpus = synth_corpus(3, 8, 30, 30)
    X, y = corpus.matrix(), corpus.label_array()
    detector = train_logistic(corpus, epochs=100, learning_rate=0.1)
    model = init_gan(8, GanConfig(noise_dim=4, gen_hidden=(8,), sub_hidden=(8,), epochs=5, seed=21))
    out1, report1 = train_matrices(model, X[y == 1], X[y == 0], detector)
    out2, report2 = train_matrices(model, X[y == 1], X[y == 0], detector)
    assert report1 == report2
    assert model_save(out1) == model_save(out2)


def test_divergent_training_aborts_with_partial_report(monkeypatch):
    # bounded activations + clipped logs keep real losses finite, so force
    # a divergence to check the abort path carries the report so far
    import gangmam.gan as gan_module
    from gangmam.errors import NonFiniteLoss

    real = gan_module.generator_loss_and_grads
    state = {"epoch_calls": 0}

    def poisoned(model, V, Z):
        loss, grads = real(model, V, Z)
        state["epoch_calls"] += 1
        if state["epoch_calls"] > 2:
            return float("nan"), grads
        return loss, grads

    monkeypatch.setattr(gan_module, "generator_loss_and_grads", poisoned)
    malware, benign = corpus_matrices()
    model = small_model(epochs=5, batch_size=64)  # one generator call per epoch
    with pytest.raises(NonFiniteLoss) as err:
        train_matrices(model, malware, benign, ConstantDetector(1))
    assert err.value.report is not None
    assert len(err.value.report.epochs) == 2


def test_training_does_not_mutate_input_model():
    malware, benign = corpus_matrices()
    model = small_model(epochs=2)
    before = model_save(model)
    train_matrices(model, malware, benign, ConstantDetector(0))
    assert model_save(model) == before


def test_train_gan_vector_wrapper():
    malware, benign = corpus_matrices()
    to_vectors = lambda M, tagx: [
        FeatureVector(sha256_hex(f"{tagx}:{i}".encode()), bytes(int(b) for b in row))
        for i, row in enumerate(M)
    ]
    model = small_model(epochs=2)
    trained, report = train_gan(
        model, to_vectors(malware, "m"), to_vectors(benign, "b"), ConstantDetector(0)
    )
    assert len(report.epochs) == 2
    with pytest.raises(EmptyCorpus):
        train_gan(model, [], to_vectors(benign, "b"), ConstantDetector(0))


def test_substitute_alone_learns_separable_data():
    rng = np.random.default_rng(5)
    X = (rng.random((200, 6)) < 0.5).astype(float)
    y = X[:, 0].copy()  # label is literally one feature: linearly separable
    model = init_gan(6, GanConfig(noise_dim=2, gen_hidden=(4,), sub_hidden=(8,), seed=2))
    for _ in range(300):
        _, grads = substitute_loss_and_grads(model, X, y)
        model.substitute.sgd_step(grads, 0.5)
    probs = model.substitute.forward(X)[:, 0]
    accuracy = float(np.mean((probs >= 0.5) == (y == 1.0)))
    assert accuracy >= 0.95


# ---- persistence -----------------------------------------------------------

def test_save_load_fixpoint():
    model = small_model()
    blob = model_save(model)
    assert model_save(model_load(blob)) == blob


def test_load_roundtrips_config():
    model = small_model(epochs=7, batch_size=5, learning_rate=0.25)
    loaded = model_load(model_save(model))
    assert loaded.config == model.config
    assert loaded.feature_dim == model.feature_dim


def test_truncated_file_rejected():
    blob = model_save(small_model())
    with pytest.raises(TruncatedFile):
        model_load(blob[:-1])


def test_bad_magic_rejected():
    blob = model_save(small_model())
    with pytest.raises(BadMagic):
        model_load(b"XXXX" + blob[4:])


def test_unsupported_version_rejected():
    blob = bytearray(model_save(small_model()))
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(VersionUnsupported):
        model_load(bytes(blob))


def test_header_dim_mismatch_rejected():
    blob = bytearray(model_save(small_model()))
    blob[8:12] = struct.pack("<I", 5)  # declared feature_dim no longer matches layers
    with pytest.raises(ShapeMismatch):
        model_load(bytes(blob))


def test_trailing_bytes_rejected():
    blob = model_save(small_model())
    with pytest.raises(ModelFormatError):
        model_load(blob + b"\x00")


# ---- estimator facade ------------------------------------------------------

def test_estimator_params_roundtrip():
    est = EvasionGan(noise_dim=4, epochs=2, seed=5)
    params = est.get_params()
    assert params["noise_dim"] == 4 and params["epochs"] == 2
    cloned = clone(est)
    assert cloned.get_params() == params


def test_estimator_fit_transform():
    corpus = synth_corpus(11, 10, 40, 40)
    detector = train_logistic(corpus, epochs=150, learning_rate=0.2)
    est = EvasionGan(
        blackbox=detector, noise_dim=4, gen_hidden=(8,), sub_hidden=(8,),
        epochs=4, batch_size=8, seed=13,
    )
    X, y = corpus.matrix(), corpus.label_array()
    out = est.fit(X, y).transform(X[y == 1])
    assert out.shape == X[y == 1].shape
    assert np.all(out >= X[y == 1])
    assert np.array_equal(out, est.transform(X[y == 1]))  # seeded, repeatable


def test_estimator_requires_blackbox():
    with pytest.raises(BadConfig):
        EvasionGan().fit(np.zeros((2, 3)), np.array([0, 1]))
