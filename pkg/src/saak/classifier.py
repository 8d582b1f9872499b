"""Softmax regression and a one-hidden-layer ReLU MLP trained by mini-batch
gradient descent on packed Saak feature vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import dataset_io
from .errors import ConfigError, DataFormatError, DomainError, TrainingError

LR_DEFAULTS = {"lr": 1e-2, "epochs": 50, "batch": 128, "l2": 1e-4, "momentum": 0.9, "seed": 0}
MLP_DEFAULTS = {
    "hidden": 512,
    "lr": 5e-3,
    "epochs": 50,
    "batch": 128,
    "l2": 1e-4,
    "momentum": 0.9,
    "seed": 0,
}


class Classifier(Protocol):
    """Anything with fit/predict on N x F arrays can stand in for the built-ins."""

    def fit(self, X, y): ...

    def predict(self, X): ...


def _f32(a) -> np.ndarray:
    # parameters are kept at float32 precision so a saved model is exact
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        return cls(_f32(X.mean(axis=0)), _f32(np.where(std > 0, std, 1.0)))

    @classmethod
    def identity(cls, n_features: int) -> "Standardizer":
        return cls(np.zeros(n_features), np.ones(n_features))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and d(loss)/d(scores)."""
    z = scores - scores.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = scores.shape[0]
    loss = float((logsum - z[np.arange(n), y]).mean())
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


def logistic_loss_and_grad(W, b, X, y, l2=0.0):
    """Mean cross-entropy + (l2/2)||W||^2 for scores X W^T + b; W is C x F."""
    loss, g = _cross_entropy(X @ W.T + b, y)
    loss += 0.5 * l2 * float((W * W).sum())
    return loss, g.T @ X + l2 * W, g.sum(axis=0)


def mlp_loss_and_grad(params, X, y, l2=0.0):
    """params = (W1 F x H, b1, W2 H x C, b2); L2 on both weight matrices."""
    W1, b1, W2, b2 = params
    pre = X @ W1 + b1
    hid = np.maximum(pre, 0.0)
    loss, g = _cross_entropy(hid @ W2 + b2, y)
    loss += 0.5 * l2 * float((W1 * W1).sum() + (W2 * W2).sum())
    gW2 = hid.T @ g + l2 * W2
    gb2 = g.sum(axis=0)
    gh = (g @ W2.T) * (pre > 0)
    gW1 = X.T @ gh + l2 * W1
    gb1 = gh.sum(axis=0)
    return loss, (gW1, gb1, gW2, gb2)


@dataclass
class LinearModel:
    weights: np.ndarray  # C x F
    bias: np.ndarray
    standardizer: Standardizer
    hyperparams: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    kind = "lr"

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def scores(self, X) -> np.ndarray:
        return self.standardizer(X) @ self.weights.T + self.bias

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


@dataclass
class MlpModel:
    w1: np.ndarray  # F x H
    b1: np.ndarray
    w2: np.ndarray  # H x C
    b2: np.ndarray
    standardizer: Standardizer
    hyperparams: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    kind = "mlp"

    @property
    def n_features(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    def scores(self, X) -> np.ndarray:
        hid = np.maximum(self.standardizer(X) @ self.w1 + self.b1, 0.0)
        return hid @ self.w2 + self.b2

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


def _check_xy(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DomainError(f"expected X (N x F) and y (N,), got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("training features contain non-finite values")
    c = int(n_classes) if n_classes is not None else int(y.max()) + 1
    if c < 2:
        raise DomainError("need at least 2 classes")
    if y.min() < 0 or y.max() >= c:
        raise DomainError(f"labels must lie in [0, {c})")
    if X.shape[0] < c:
        raise DomainError(f"need N >= C, got N={X.shape[0]}, C={c}")
    return X, y, c


def _hyper(defaults: dict, overrides: dict) -> dict:
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
    hp = {**defaults, **overrides}
    if hp["lr"] <= 0 or hp["epochs"] < 1 or hp["batch"] < 1 or hp["l2"] < 0:
        raise ConfigError(f"bad hyperparameters {hp}")
    if not 0 <= hp["momentum"] < 1:
        raise ConfigError("momentum must be in [0, 1)")
    return hp


def _descend(params, loss_and_grad, X, y, hp, rng, label):
    """Mini-batch gradient descent with heavy-ball momentum; updates params
    in place and returns the mean batch loss of every epoch."""
    n = X.shape[0]
    velocity = [np.zeros_like(p) for p in params]
    history = []
    for epoch in range(hp["epochs"]):
        order = rng.permutation(n) if hp["batch"] < n else np.arange(n)
        total = 0.0
        for s in range(0, n, hp["batch"]):
            idx = order[s : s + hp["batch"]]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"{label}: loss diverged at epoch {epoch + 1} (lr={hp['lr']}); try a smaller lr"
                )
            total += loss * idx.shape[0]
            for p, v, g in zip(params, velocity, grads):
                v *= hp["momentum"]
                v -= hp["lr"] * g
                p += v
        history.append(total / n)
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingError(f"{label}: parameters became non-finite; try a smaller lr")
    return history


def train_logistic(X, y, n_classes=None, standardize=True, **hyperparams) -> LinearModel:
    hp = _hyper(LR_DEFAULTS, hyperparams)
    X, y, c = _check_xy(X, y, n_classes)
    std = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
    Xs = std(X)
    params = [np.zeros((c, X.shape[1])), np.zeros(c)]

    def lg(p, xb, yb):
        loss, gW, gb = logistic_loss_and_grad(p[0], p[1], xb, yb, hp["l2"])
        return loss, (gW, gb)

    rng = np.random.default_rng(hp["seed"])
    history = _descend(params, lg, Xs, y, hp, rng, "logistic regression")
    return LinearModel(_f32(params[0]), _f32(params[1]), std, hp, history)


def glorot_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def train_mlp(X, y, n_classes=None, standardize=True, **hyperparams) -> MlpModel:
    hp = _hyper(MLP_DEFAULTS, hyperparams)
    if int(hp["hidden"]) < 1:
        raise ConfigError("hidden layer width must be >= 1")
    X, y, c = _check_xy(X, y, n_classes)
    std = Standardizer.fit(X) if standardize else Standardizer.identity(X.shape[1])
    Xs = std(X)
    h = int(hp["hidden"])
    rng = np.random.default_rng(hp["seed"])
    params = [glorot_uniform(rng, X.shape[1], h), np.zeros(h), glorot_uniform(rng, h, c), np.zeros(c)]
    history = _descend(
        params, lambda p, xb, yb: mlp_loss_and_grad(p, xb, yb, hp["l2"]), Xs, y, hp, rng, "MLP"
    )
    return MlpModel(*(_f32(p) for p in params), std, hp, history)


TRAINERS = {"lr": train_logistic, "mlp": train_mlp}


def predict(model, X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DomainError(f"model expects {model.n_features} features, got shape {X.shape}")
    # argmax returns the first maximum, i.e. the lowest class on ties
    return model.scores(X).argmax(axis=1)


def evaluate(model, X, y) -> float:
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise DomainError("cannot evaluate on an empty set")
    if np.asarray(X).shape[0] != y.shape[0]:
        raise DomainError("feature and label counts differ")
    return float((model.predict(X) == y).mean())


# ---------------------------------------------------------------------------
# persistence: <stem>.saak is a flat float32 vector, <stem>.meta its layout


def save_model(path, model) -> None:
    path = Path(path)
    parts = [model.standardizer.mean, model.standardizer.scale, *model.parameters()]
    dataset_io.save_tensor(path, np.concatenate([np.ravel(p) for p in parts]))
    fields = {
        "classifier": model.kind,
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "shapes": ";".join("x".join(str(d) for d in np.shape(p)) for p in parts),
    }
    fields.update({f"hp.{k}": v for k, v in sorted(model.hyperparams.items())})
    fields["loss_history"] = [float(v) for v in model.loss_history]
    dataset_io.write_meta(path.with_suffix(".meta"), "model", fields)


def _hp_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_model(path):
    path = Path(path)
    flat = dataset_io.load_tensor(path).astype(np.float64)
    meta = dataset_io.read_meta(path.with_suffix(".meta"), "model")
    try:
        shapes = [tuple(int(d) for d in s.split("x") if d) for s in meta["shapes"].split(";")]
        kind = meta["classifier"]
    except (KeyError, ValueError) as e:
        raise DataFormatError(f"{path}: bad model metadata ({e})") from e
    sizes = [int(np.prod(s)) for s in shapes]
    if flat.ndim != 1 or sum(sizes) != flat.shape[0]:
        raise DataFormatError(f"{path}: parameter vector length disagrees with metadata")
    parts, pos = [], 0
    for s, n in zip(shapes, sizes):
        parts.append(flat[pos : pos + n].reshape(s))
        pos += n
    hp = {k[3:]: _hp_value(v) for k, v in meta.items() if k.startswith("hp.")}
    history = [float(v) for v in meta.get("loss_history", "").split()]
    std = Standardizer(parts[0], parts[1])
    if kind == "lr" and len(parts) == 4:
        return LinearModel(parts[2], parts[3], std, hp, history)
    if kind == "mlp" and len(parts) == 6:
        return MlpModel(*parts[2:], std, hp, history)
    raise DataFormatError(f"{path}: unknown classifier layout {kind!r}")
