"""The two reference baselines: sentence-length features and attribute
features, each feeding a from-scratch logistic regression.

The regression is trained by full-batch gradient descent on the
L2-regularized binary cross-entropy so its analytic gradient can be
checked against finite differences. Features are z-scored with
training-set statistics stored inside the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Sentence, SlcLabel
from .errors import ValidationError
from .perspective import ATTRIBUTES, AttributeScores

LENGTH_SCHEMA = "length"
ATTRIBUTE_SCHEMA = "attributes"
SCHEMA_SIZES = {LENGTH_SCHEMA: 2, ATTRIBUTE_SCHEMA: len(ATTRIBUTES)}

MAX_ITERATIONS = 10**6
_PROB_EPS = 1e-12

_MODEL_HEADER = "propsent-linear-model v1"


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    schema_id: str

    def __post_init__(self):
        expected = SCHEMA_SIZES.get(self.schema_id)
        if expected is None:
            raise ValidationError(f"unknown feature schema {self.schema_id!r}")
        if len(self.values) != expected:
            raise ValidationError(
                f"schema {self.schema_id!r} expects {expected} features, "
                f"got {len(self.values)}"
            )
        if not all(np.isfinite(v) for v in self.values):
            raise ValidationError(f"non-finite feature value in {self.values}")


@dataclass(frozen=True)
class LinearTrainConfig:
    learning_rate: float = 0.1
    iterations: int = 2000
    l2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 1 <= self.iterations <= MAX_ITERATIONS:
            raise ValidationError(
                f"iterations must be in [1, {MAX_ITERATIONS}], got {self.iterations}"
            )
        if not (np.isfinite(self.l2) and self.l2 >= 0):
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")


@dataclass
class LinearModel:
    schema_id: str
    mean: tuple[float, ...]
    std: tuple[float, ...]
    weights: tuple[float, ...]
    bias: float
    # Per-iteration training losses; informational, not persisted.
    loss_history: tuple[float, ...] | None = field(default=None, compare=False)


def length_features(sentence: Sentence | str) -> FeatureVector:
    """Two features: character count and whitespace-token count."""
    text = sentence.text if isinstance(sentence, Sentence) else sentence
    return FeatureVector(
        values=(float(len(text)), float(len(text.split()))),
        schema_id=LENGTH_SCHEMA,
    )


def attribute_features(scores: AttributeScores | Mapping[str, float]) -> FeatureVector:
    """The 12 attribute scores in canonical order."""
    if not isinstance(scores, AttributeScores):
        scores = AttributeScores.from_mapping(scores)
    return FeatureVector(values=scores.as_tuple(), schema_id=ATTRIBUTE_SCHEMA)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_gradient(X: np.ndarray, y: np.ndarray, weights: np.ndarray,
                      bias: float, l2: float) -> tuple[float, np.ndarray, float]:
    """Mean BCE + (l2/2)·||w||² with its analytic gradient.

    Uses the softplus form log(1+e^z) − y·z so the loss stays finite for
    any logit; the bias is not regularized.
    """
    z = X @ weights + bias
    losses = np.logaddexp(0.0, z) - y * z
    loss = float(np.mean(losses) + 0.5 * l2 * np.dot(weights, weights))
    residual = _sigmoid(z) - y
    grad_w = X.T @ residual / len(y) + l2 * weights
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def train_logistic(features: Sequence[FeatureVector], labels: Sequence[SlcLabel],
                   config: LinearTrainConfig = LinearTrainConfig()) -> LinearModel:
    """Fit the regression by deterministic full-batch gradient descent.

    Training loss is recorded before every step and once after the last,
    so loss_history[-1] is the final training loss.
    """
    if len(features) != len(labels):
        raise ValidationError(
            f"{len(features)} feature vectors but {len(labels)} labels"
        )
    if not features:
        raise ValidationError("cannot train on an empty dataset")
    schemas = {fv.schema_id for fv in features}
    if len(schemas) != 1:
        raise ValidationError(f"mixed feature schemas: {sorted(schemas)}")
    schema_id = schemas.pop()

    X = np.array([fv.values for fv in features], dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite feature value")
    y = np.array([1.0 if lb is SlcLabel.PROPAGANDA else 0.0 for lb in labels])

    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    Xs = (X - mean) / std

    weights = np.zeros(X.shape[1])
    bias = 0.0
    history = []
    for _ in range(config.iterations):
        loss, grad_w, grad_b = loss_and_gradient(Xs, y, weights, bias, config.l2)
        history.append(loss)
        weights = weights - config.learning_rate * grad_w
        bias = bias - config.learning_rate * grad_b
    final_loss, _, _ = loss_and_gradient(Xs, y, weights, bias, config.l2)
    history.append(final_loss)

    return LinearModel(
        schema_id=schema_id,
        mean=tuple(float(v) for v in mean),
        std=tuple(float(v) for v in std),
        weights=tuple(float(w) for w in weights),
        bias=float(bias),
        loss_history=tuple(history),
    )


def predict_proba(model: LinearModel, features: FeatureVector) -> float:
    """sigmoid(w·x̃ + b) over the standardized features, strictly in (0, 1)."""
    if features.schema_id != model.schema_id:
        raise ValidationError(
            f"feature schema {features.schema_id!r} does not match model "
            f"schema {model.schema_id!r}"
        )
    x = (np.array(features.values) - np.array(model.mean)) / np.array(model.std)
    z = float(np.dot(model.weights, x) + model.bias)
    p = float(_sigmoid(np.array([z]))[0])
    return min(max(p, _PROB_EPS), 1.0 - _PROB_EPS)


def save_model(model: LinearModel, path: str | Path) -> None:
    """Plain-text persistence; repr() keeps floats byte-exact."""
    lines = [
        _MODEL_HEADER,
        f"schema\t{model.schema_id}",
        "mean\t" + " ".join(repr(v) for v in model.mean),
        "std\t" + " ".join(repr(v) for v in model.std),
        "weights\t" + " ".join(repr(v) for v in model.weights),
        f"bias\t{model.bias!r}",
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def is_model_file(path: str | Path) -> bool:
    path = Path(path)
    if not path.is_file():
        return False
    try:
        with path.open(encoding="utf-8") as fh:
            return fh.readline().rstrip("\n") == _MODEL_HEADER
    except (OSError, UnicodeDecodeError):
        return False


def load_model(path: str | Path) -> LinearModel:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"model file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MODEL_HEADER:
        raise ValidationError(f"{path} is not a linear model file")
    fields: dict[str, str] = {}
    for line in lines[1:]:
        if not line:
            continue
        key, _, value = line.partition("\t")
        fields[key] = value
    try:
        vectors = {
            key: tuple(float(v) for v in fields[key].split())
            for key in ("mean", "std", "weights")
        }
        model = LinearModel(
            schema_id=fields["schema"],
            mean=vectors["mean"],
            std=vectors["std"],
            weights=vectors["weights"],
            bias=float(fields["bias"]),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path} is malformed: {exc}") from None
    sizes = {len(model.mean), len(model.std), len(model.weights),
             SCHEMA_SIZES.get(model.schema_id)}
    if len(sizes) != 1:
        raise ValidationError(f"{path}: inconsistent vector lengths")
    return model
