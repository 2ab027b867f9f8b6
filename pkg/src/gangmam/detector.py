"""The black-box side: synthetic labeled corpora and a reference detector.

The detector is a from-scratch logistic regression behind an opaque
``predict`` interface, so the GAN never sees more than labels.  Synthetic
corpora stand in for a real malware/goodware collection at desk scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .apk import sha256_hex
from .checks import check_binary_labels, check_bit_matrix
from .errors import (
    BadMagic,
    BadParams,
    EmptyInput,
    ModelFormatError,
    NonFiniteLoss,
    ShapeMismatch,
    TruncatedFile,
    VersionUnsupported,
)
from .features import FeatureVector, stack_bits
from .nn import sigmoid

_MAGIC = b"GMBB"
_FORMAT_VERSION = 1


class Label(IntEnum):
    BENIGN = 0
    MALICIOUS = 1


@dataclass(frozen=True)
class LabeledCorpus:
    """Vectors plus labels plus the parameters that generated them."""

    vectors: tuple[FeatureVector, ...]
    labels: tuple[int, ...]
    seed: int
    dims: int
    n_malicious: int
    n_benign: int

    def __post_init__(self):
        if len(self.vectors) != len(self.labels):
            raise BadParams("vectors and labels must have the same length")
        if any(len(v) != self.dims for v in self.vectors):
            raise BadParams("all vectors must match the corpus dimension")

    def matrix(self) -> np.ndarray:
        return stack_bits(self.vectors)

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.float64)

    def split(self, train_fraction: float) -> tuple["LabeledCorpus", "LabeledCorpus"]:
        """Deterministic per-class head/tail split (rows are i.i.d.)."""
        cut_mal = int(self.n_malicious * train_fraction)
        cut_ben = int(self.n_benign * train_fraction)
        mal = [i for i, label in enumerate(self.labels) if label == Label.MALICIOUS]
        ben = [i for i, label in enumerate(self.labels) if label == Label.BENIGN]
        train_idx = mal[:cut_mal] + ben[:cut_ben]
        test_idx = mal[cut_mal:] + ben[cut_ben:]

        def subset(indices, n_mal, n_ben):
            return LabeledCorpus(
                vectors=tuple(self.vectors[i] for i in indices),
                labels=tuple(self.labels[i] for i in indices),
                seed=self.seed,
                dims=self.dims,
                n_malicious=n_mal,
                n_benign=n_ben,
            )

        return (
            subset(train_idx, cut_mal, cut_ben),
            subset(test_idx, self.n_malicious - cut_mal, self.n_benign - cut_ben),
        )


def synth_corpus(seed: int, dims: int, n_mal: int, n_ben: int) -> LabeledCorpus:
    """Deterministic Bernoulli corpus with separable classes.

    Per-feature probabilities are drawn once from the seed: malicious rows
    are sparser (U(0.05, 0.5) per feature) than benign rows (U(0.2, 0.8)),
    so the classes differ both per feature and in expected popcount, and an
    additive attacker has benign-looking bits available to add.
    """
    if dims < 2:
        raise BadParams("dims must be >= 2")
    if n_mal < 1 or n_ben < 1:
        raise BadParams("need at least one sample per class")
    rng = np.random.default_rng(seed)
    p_mal = rng.uniform(0.05, 0.5, size=dims)
    p_ben = rng.uniform(0.2, 0.8, size=dims)
    mal_rows = (rng.random((n_mal, dims)) < p_mal).astype(np.uint8)
    ben_rows = (rng.random((n_ben, dims)) < p_ben).astype(np.uint8)

    vectors = []
    labels = []
    for i, row in enumerate(mal_rows):
        vectors.append(
            FeatureVector.from_array(sha256_hex(f"synth:{seed}:mal:{i}".encode()), row)
        )
        labels.append(int(Label.MALICIOUS))
    for i, row in enumerate(ben_rows):
        vectors.append(
            FeatureVector.from_array(sha256_hex(f"synth:{seed}:ben:{i}".encode()), row)
        )
        labels.append(int(Label.BENIGN))
    return LabeledCorpus(
        vectors=tuple(vectors),
        labels=tuple(labels),
        seed=seed,
        dims=dims,
        n_malicious=n_mal,
        n_benign=n_ben,
    )


class LogisticDetector(BaseEstimator, ClassifierMixin):
    """Full-batch gradient-descent logistic regression.

    Deterministic (zero init, fixed iteration count) and monotone in training
    loss for small enough learning rates.  Ties at probability 0.5 classify
    as malicious: the conservative call for a security detector.
    """

    #: fixed decision cut: probability >= threshold classifies as malicious
    decision_threshold = 0.5

    def __init__(self, epochs: int = 300, learning_rate: float = 0.1):
        self.epochs = epochs
        self.learning_rate = learning_rate

    def fit(self, X, y):
        X = check_bit_matrix(X)
        y = check_binary_labels(y, X.shape[0])
        n, dims = X.shape
        w = np.zeros(dims)
        b = 0.0
        losses = []
        for _ in range(self.epochs):
            p = sigmoid(X @ w + b)
            eps = 1e-12
            loss = -float(np.mean(y * np.log(np.maximum(p, eps))
                                  + (1.0 - y) * np.log(np.maximum(1.0 - p, eps))))
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"logistic training diverged (loss={loss})")
            losses.append(loss)
            grad = (p - y) / n
            w -= self.learning_rate * (X.T @ grad)
            b -= self.learning_rate * float(grad.sum())
        self.weights_ = w
        self.bias_ = b
        self.loss_curve_ = tuple(losses)
        self.n_features_in_ = dims
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        X = check_bit_matrix(X, self.n_features_in_)
        return X @ self.weights_ + self.bias_

    def predict_proba(self, X) -> np.ndarray:
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        # >= keeps the tie-goes-malicious rule
        return (self.predict_proba(X)[:, 1] >= self.decision_threshold).astype(np.int64)

    def classify(self, v: FeatureVector) -> tuple[float, Label]:
        """Probability of being malicious plus the thresholded label."""
        if len(v) != self.n_features_in_:
            raise ShapeMismatch(f"vector has {len(v)} bits, detector expects {self.n_features_in_}")
        probability = float(self.predict_proba(v.to_array())[0, 1])
        label = Label.MALICIOUS if probability >= self.decision_threshold else Label.BENIGN
        return probability, label

    def score_accuracy(self, corpus: LabeledCorpus) -> float:
        predictions = self.predict(corpus.matrix())
        return float(np.mean(predictions == corpus.label_array()))

    # ---- persistence: magic GMBB, little-endian ----

    def save_bytes(self) -> bytes:
        if not hasattr(self, "weights_"):
            raise ModelFormatError("detector is not fitted")
        header = _MAGIC + struct.pack(
            "<III", _FORMAT_VERSION, self.n_features_in_, self.epochs
        )
        header += struct.pack("<dd", self.learning_rate, self.bias_)
        return header + np.ascontiguousarray(self.weights_, dtype="<f8").tobytes()

    @classmethod
    def load_bytes(cls, data: bytes) -> "LogisticDetector":
        need = len(_MAGIC) + struct.calcsize("<III") + struct.calcsize("<dd")
        if len(data) < need:
            raise TruncatedFile(f"detector file shorter than its header ({len(data)} bytes)")
        if data[:4] != _MAGIC:
            raise BadMagic(f"expected {_MAGIC!r}, got {data[:4]!r}")
        version, dims, epochs = struct.unpack_from("<III", data, 4)
        if version != _FORMAT_VERSION:
            raise VersionUnsupported(f"format version {version} is not supported")
        learning_rate, bias = struct.unpack_from("<dd", data, 16)
        payload = data[need:]
        if len(payload) != dims * 8:
            raise TruncatedFile(f"expected {dims * 8} weight bytes, got {len(payload)}")
        detector = cls(epochs=epochs, learning_rate=learning_rate)
        detector.weights_ = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        detector.bias_ = bias
        detector.n_features_in_ = dims
        detector.classes_ = np.array([0, 1])
        return detector


def train_logistic(
    corpus: LabeledCorpus, epochs: int = 300, learning_rate: float = 0.1
) -> LogisticDetector:
    """Fit the reference detector on a labeled corpus."""
    return LogisticDetector(epochs=epochs, learning_rate=learning_rate).fit(
        corpus.matrix(), corpus.label_array()
    )


def classify(detector: LogisticDetector, v: FeatureVector) -> tuple[float, Label]:
    return detector.classify(v)


def evasion_rate(detector, adversarial) -> float:
    """Fraction of adversarial vectors the detector labels benign."""
    vectors = list(adversarial)
    if not vectors:
        raise EmptyInput("evasion rate over zero vectors is undefined")
    predictions = detector.predict(stack_bits(vectors))
    return float(np.mean(np.asarray(predictions) == 0))
