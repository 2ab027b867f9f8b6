"""The feature-vector GAN: generator plus substitute detector.

The generator maps (feature bits ‖ uniform noise) to per-feature
probabilities; thresholding and OR-ing with the input yields a strictly
additive adversarial vector.  The substitute detector distills the black box
so the generator has gradients to descend.

Training path vs emitted vectors: gradient updates flow through the
continuous merge ``v + (1 - v) * g`` (identity where the original bit is 0,
zero-gradient where it is 1), while every emitted vector is the thresholded,
OR-merged binary form.  The continuous path is smooth, so its analytic
gradients are checkable against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .checks import check_binary_labels, check_bit_matrix
from .errors import (
    BadConfig,
    BadMagic,
    EmptyCorpus,
    ModelFormatError,
    NonFiniteLoss,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from .features import FeatureVector, stack_bits
from .nn import DenseNet

_MAGIC = b"GMAM"
_FORMAT_VERSION = 1

# Sub-streams of the model seed, so init / training / standalone transforms
# draw from independent deterministic sequences.
_INIT_STREAM = 0
_TRAIN_STREAM = 1
_TRANSFORM_STREAM = 2


class BlackBoxDetector(Protocol):
    """Opaque detector interface: only labels are observable."""

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Return 1 for malicious and 0 for benign, one entry per row."""
        ...


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 10
    gen_hidden: tuple[int, ...] = (128,)
    sub_hidden: tuple[int, ...] = (128,)
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 32
    binarize_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(int(w) for w in self.gen_hidden))
        object.__setattr__(self, "sub_hidden", tuple(int(w) for w in self.sub_hidden))
        if self.noise_dim < 1:
            raise BadConfig("noise_dim must be >= 1")
        if any(w < 1 for w in self.gen_hidden) or any(w < 1 for w in self.sub_hidden):
            raise BadConfig("hidden layer widths must be >= 1")
        if self.learning_rate <= 0 or not np.isfinite(self.learning_rate):
            raise BadConfig("learning_rate must be positive and finite")
        if self.epochs < 1:
            raise BadConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise BadConfig("batch_size must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise BadConfig("binarize_threshold must be strictly inside (0, 1)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise BadConfig("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    substitute_loss: float
    generator_loss: float
    evasion_rate: float


@dataclass(frozen=True)
class TrainingReport:
    epochs: tuple[EpochRecord, ...]

    @property
    def final_evasion_rate(self) -> float:
        return self.epochs[-1].evasion_rate if self.epochs else 0.0


@dataclass(eq=False)
class GanModel:
    feature_dim: int
    generator: DenseNet
    substitute: DenseNet
    config: GanConfig = field(default_factory=GanConfig)

    def __post_init__(self):
        expected_gen_in = self.feature_dim + self.config.noise_dim
        if self.generator.input_dim != expected_gen_in:
            raise ShapeMismatch(
                f"generator input {self.generator.input_dim} != "
                f"feature_dim + noise_dim = {expected_gen_in}"
            )
        if self.generator.output_dim != self.feature_dim:
            raise ShapeMismatch("generator output dim must equal feature_dim")
        if self.substitute.input_dim != self.feature_dim:
            raise ShapeMismatch("substitute input dim must equal feature_dim")
        if self.substitute.output_dim != 1:
            raise ShapeMismatch("substitute must have a scalar output")
        for net in (self.generator, self.substitute):
            for w, b in zip(net.weights, net.biases):
                if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                    raise ShapeMismatch("model weights must be finite")

    def copy(self) -> "GanModel":
        return GanModel(
            self.feature_dim, self.generator.copy(), self.substitute.copy(), self.config
        )


def init_gan(feature_dim: int, config: GanConfig) -> GanModel:
    """Fresh deterministic model for the given feature dimension."""
    if feature_dim < 1:
        raise BadConfig("feature_dim must be >= 1")
    rng = np.random.default_rng([int(config.seed), _INIT_STREAM])
    generator = DenseNet.init(
        (feature_dim + config.noise_dim, *config.gen_hidden, feature_dim), rng
    )
    substitute = DenseNet.init((feature_dim, *config.sub_hidden, 1), rng)
    return GanModel(feature_dim, generator, substitute, config)


# --------------------------------------------------------------------------
# forward passes (matrix level, plus the single-vector operations)
# --------------------------------------------------------------------------

def generator_probs(model: GanModel, V: np.ndarray, Z: np.ndarray) -> np.ndarray:
    V = check_bit_matrix(V, model.feature_dim)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z.reshape(1, -1)
    if Z.shape != (V.shape[0], model.config.noise_dim):
        raise ShapeMismatch(
            f"noise must be ({V.shape[0]}, {model.config.noise_dim}), got {Z.shape}"
        )
    return model.generator.forward(np.hstack([V, Z]))


def substitute_probs(model: GanModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.feature_dim:
        raise ShapeMismatch(f"expected {model.feature_dim} features, got {X.shape[1]}")
    return model.substitute.forward(X)[:, 0]


def perturb_matrix(model: GanModel, V: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Binary adversarial rows: OR of the input with the thresholded output."""
    probs = generator_probs(model, V, Z)
    flips = (probs >= model.config.binarize_threshold).astype(np.float64)
    return np.maximum(check_bit_matrix(V, model.feature_dim), flips)


def generator_forward(model: GanModel, v: FeatureVector, noise: np.ndarray) -> np.ndarray:
    """Per-feature probabilities in (0, 1) for one vector."""
    return generator_probs(model, v.to_array(), np.asarray(noise))[0]


def substitute_forward(model: GanModel, v: FeatureVector) -> float:
    """Substitute's P(malicious) for one vector."""
    return float(substitute_probs(model, v.to_array())[0])


def perturb(model: GanModel, v: FeatureVector, noise: np.ndarray) -> FeatureVector:
    """Strictly additive adversarial successor of ``v`` (same APK hash)."""
    row = perturb_matrix(model, v.to_array(), np.asarray(noise))[0]
    return FeatureVector.from_array(v.apk_hash, row)


# --------------------------------------------------------------------------
# losses and gradients
# --------------------------------------------------------------------------

def substitute_loss_and_grads(model, X, y):
    """Mean BCE of the substitute against black-box labels, with gradients.

    Returns (loss, per-layer grads for the substitute net).
    """
    X = check_bit_matrix(X, model.feature_dim)
    y = check_binary_labels(y, X.shape[0])
    cache = model.substitute.forward_cached(X)
    s = cache.output[:, 0]
    n = X.shape[0]
    eps = 1e-12
    loss = -float(np.mean(y * np.log(np.maximum(s, eps))
                          + (1.0 - y) * np.log(np.maximum(1.0 - s, eps))))
    d_pre = ((s - y) / n).reshape(-1, 1)
    grads, _ = model.substitute.backward(cache, d_pre)
    return loss, grads


def generator_loss_and_grads(model, V, Z):
    """Mean log substitute score of the continuous merge, with gradients.

    The merge is ``v + (1 - v) * g``: gradients pass where the original bit
    is 0 and vanish where it is 1.  Minimizing drives the substitute's
    malicious score down.  Returns (loss, per-layer grads for the generator).
    """
    V = check_bit_matrix(V, model.feature_dim)
    gen_cache = model.generator.forward_cached(
        np.hstack([V, np.asarray(Z, dtype=np.float64)])
    )
    g = gen_cache.output
    merged = V + (1.0 - V) * g
    sub_cache = model.substitute.forward_cached(merged)
    s = sub_cache.output[:, 0]
    n = V.shape[0]
    loss = float(np.mean(np.log(np.maximum(s, 1e-300))))
    # d mean(log s) / d z_sub = (1 - s) / n for a sigmoid output
    d_sub_pre = ((1.0 - s) / n).reshape(-1, 1)
    _, d_merged = model.substitute.backward(sub_cache, d_sub_pre)
    d_g = d_merged * (1.0 - V)
    d_gen_pre = d_g * g * (1.0 - g)
    grads, _ = model.generator.backward(gen_cache, d_gen_pre)
    return loss, grads


def _minibatch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _as_label_array(values, n: int) -> np.ndarray:
    labels = np.asarray(values).ravel().astype(np.int64)
    if labels.shape[0] != n:
        raise ShapeMismatch(f"detector returned {labels.shape[0]} labels for {n} rows")
    return labels


def train_matrices(
    model: GanModel,
    malware: np.ndarray,
    benign: np.ndarray,
    blackbox: BlackBoxDetector,
) -> tuple[GanModel, TrainingReport]:
    """Adversarial training loop over bit matrices.

    Per epoch: perturb all malware with fresh noise, label the adversarial
    rows and the benign corpus via the black box, fit the substitute to those
    labels (one SGD pass), then update the generator (one SGD pass) against
    the frozen substitute.  The reported evasion rate is measured on the
    epoch's noise with the updated generator.
    """
    malware = check_bit_matrix(malware)
    benign = check_bit_matrix(benign)
    if malware.shape[0] == 0 or benign.shape[0] == 0:
        raise EmptyCorpus("need at least one malware and one benign vector")
    if malware.shape[1] != model.feature_dim or benign.shape[1] != model.feature_dim:
        raise ShapeMismatch("corpus width does not match the model's feature_dim")

    model = model.copy()
    cfg = model.config
    rng = np.random.default_rng([int(cfg.seed), _TRAIN_STREAM])
    n_mal = malware.shape[0]
    records: list[EpochRecord] = []

    for epoch in range(1, cfg.epochs + 1):
        noise = rng.uniform(0.0, 1.0, size=(n_mal, cfg.noise_dim))
        adversarial = perturb_matrix(model, malware, noise)

        X = np.vstack([adversarial, benign])
        y = np.concatenate(
            [
                _as_label_array(blackbox.predict(adversarial), n_mal),
                _as_label_array(blackbox.predict(benign), benign.shape[0]),
            ]
        ).astype(np.float64)
        order = rng.permutation(X.shape[0])
        sub_loss = 0.0
        for sl in _minibatch_slices(X.shape[0], cfg.batch_size):
            batch = order[sl]
            loss, grads = substitute_loss_and_grads(model, X[batch], y[batch])
            model.substitute.sgd_step(grads, cfg.learning_rate)
            sub_loss += loss * batch.size
        sub_loss /= X.shape[0]

        order = rng.permutation(n_mal)
        gen_loss = 0.0
        for sl in _minibatch_slices(n_mal, cfg.batch_size):
            batch = order[sl]
            loss, grads = generator_loss_and_grads(model, malware[batch], noise[batch])
            model.generator.sgd_step(grads, cfg.learning_rate)
            gen_loss += loss * batch.size
        gen_loss /= n_mal

        if not (np.isfinite(sub_loss) and np.isfinite(gen_loss)):
            raise NonFiniteLoss(
                f"training diverged at epoch {epoch}",
                report=TrainingReport(tuple(records)),
            )

        evaded = perturb_matrix(model, malware, noise)
        evasion = float(np.mean(_as_label_array(blackbox.predict(evaded), n_mal) == 0))
        records.append(EpochRecord(epoch, float(sub_loss), float(gen_loss), evasion))

    return model, TrainingReport(tuple(records))


def train_gan(
    model: GanModel,
    malware: Sequence[FeatureVector],
    benign: Sequence[FeatureVector],
    blackbox: BlackBoxDetector,
) -> tuple[GanModel, TrainingReport]:
    """Vector-level wrapper around :func:`train_matrices`."""
    if not malware or not benign:
        raise EmptyCorpus("need at least one malware and one benign vector")
    return train_matrices(model, stack_bits(malware), stack_bits(benign), blackbox)


# --------------------------------------------------------------------------
# persistence: magic GMAM, little-endian, self-describing layer blocks
# --------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise TruncatedFile(
                f"need {size} bytes at offset {self.offset}, have {len(self.data) - self.offset}"
            )
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def take_array(self, count: int) -> np.ndarray:
        size = count * 8
        if self.offset + size > len(self.data):
            raise TruncatedFile(
                f"need {size} bytes at offset {self.offset}, have {len(self.data) - self.offset}"
            )
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return arr.astype(np.float64)


def _pack_net(net: DenseNet) -> bytes:
    chunks = [struct.pack("<I", len(net.weights))]
    for w, b in zip(net.weights, net.biases):
        chunks.append(struct.pack("<II", w.shape[0], w.shape[1]))
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def _unpack_net(reader: _Reader) -> DenseNet:
    (n_layers,) = reader.take("<I")
    if n_layers == 0 or n_layers > 64:
        raise ModelFormatError(f"implausible layer count {n_layers}")
    weights = []
    biases = []
    for _ in range(n_layers):
        fan_in, fan_out = reader.take("<II")
        if fan_in == 0 or fan_out == 0:
            raise ModelFormatError("layer with zero dimension")
        weights.append(reader.take_array(fan_in * fan_out).reshape(fan_in, fan_out))
        biases.append(reader.take_array(fan_out))
    try:
        return DenseNet(weights, biases)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None


def model_save(model: GanModel) -> bytes:
    cfg = model.config
    header = _MAGIC + struct.pack(
        "<IIIdIIdQ",
        _FORMAT_VERSION,
        model.feature_dim,
        cfg.noise_dim,
        cfg.learning_rate,
        cfg.epochs,
        cfg.batch_size,
        cfg.binarize_threshold,
        int(cfg.seed),
    )
    return header + _pack_net(model.generator) + _pack_net(model.substitute)


def model_load(data: bytes) -> GanModel:
    reader = _Reader(data)
    (magic,) = reader.take("<4s")
    if magic != _MAGIC:
        raise BadMagic(f"expected {_MAGIC!r}, got {magic!r}")
    (version,) = reader.take("<I")
    if version != _FORMAT_VERSION:
        raise VersionUnsupported(f"format version {version} is not supported")
    feature_dim, noise_dim = reader.take("<II")
    learning_rate, = reader.take("<d")
    epochs, batch_size = reader.take("<II")
    threshold, = reader.take("<d")
    seed, = reader.take("<Q")
    generator = _unpack_net(reader)
    substitute = _unpack_net(reader)
    if reader.offset != len(data):
        raise ModelFormatError(f"{len(data) - reader.offset} trailing bytes after payload")
    config = GanConfig(
        noise_dim=noise_dim,
        gen_hidden=generator.sizes[1:-1],
        sub_hidden=substitute.sizes[1:-1],
        learning_rate=learning_rate,
        epochs=epochs,
        batch_size=batch_size,
        binarize_threshold=threshold,
        seed=seed,
    )
    return GanModel(feature_dim, generator, substitute, config)


# --------------------------------------------------------------------------
# sklearn-style facade
# --------------------------------------------------------------------------

class EvasionGan(BaseEstimator, TransformerMixin):
    """Estimator facade: fit on a labeled bit matrix, transform malware rows.

    ``fit(X, y)`` takes 0/1 feature rows and labels (1 = malicious,
    0 = benign) plus the black-box detector handle given at construction;
    ``transform(X)`` returns the strictly additive adversarial rows.  All
    randomness derives from ``seed``, so repeated calls are reproducible.
    """

    def __init__(
        self,
        blackbox: BlackBoxDetector | None = None,
        noise_dim: int = 10,
        gen_hidden: tuple[int, ...] = (128,),
        sub_hidden: tuple[int, ...] = (128,),
        learning_rate: float = 0.001,
        epochs: int = 50,
        batch_size: int = 32,
        binarize_threshold: float = 0.5,
        seed: int = 0,
    ):
        self.blackbox = blackbox
        self.noise_dim = noise_dim
        self.gen_hidden = gen_hidden
        self.sub_hidden = sub_hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.binarize_threshold = binarize_threshold
        self.seed = seed

    def _config(self) -> GanConfig:
        return GanConfig(
            noise_dim=self.noise_dim,
            gen_hidden=tuple(self.gen_hidden),
            sub_hidden=tuple(self.sub_hidden),
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            binarize_threshold=self.binarize_threshold,
            seed=self.seed,
        )

    def fit(self, X, y):
        if self.blackbox is None:
            raise BadConfig("EvasionGan needs a black-box detector to train against")
        X = check_bit_matrix(X)
        y = check_binary_labels(y, X.shape[0])
        malware = X[y == 1.0]
        benign = X[y == 0.0]
        model = init_gan(X.shape[1], self._config())
        self.model_, self.report_ = train_matrices(model, malware, benign, self.blackbox)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise BadConfig("EvasionGan is not fitted yet")
        X = check_bit_matrix(X, self.n_features_in_)
        rng = np.random.default_rng([int(self.seed), _TRANSFORM_STREAM])
        noise = rng.uniform(0.0, 1.0, size=(X.shape[0], self.model_.config.noise_dim))
        return perturb_matrix(self.model_, X, noise)
