"""Kernels, one-vs-rest kernel SVM, k-nearest neighbours and softmax regression."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _native

SCHEMA_VERSION = 1
KERNELS = ("linear", "poly", "rbf", "sigmoid", "hist_intersection")
SV_THRESHOLD = 1e-8

log = logging.getLogger(__name__)


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    degree: int = 3
    gamma: float | str = "scale"
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ClassifierError(f"unknown kernel {self.kind!r}")
        if self.degree < 1:
            raise ClassifierError(f"degree must be >= 1, got {self.degree}")
        if isinstance(self.gamma, str):
            if self.gamma != "scale":
                raise ClassifierError(f"gamma must be a positive number or 'scale', got {self.gamma!r}")
        elif not self.gamma > 0:
            raise ClassifierError(f"gamma must be positive, got {self.gamma}")

    def resolve(self, X) -> "KernelSpec":
        """Replace gamma='scale' by 1 / (dim * var(X))."""
        if not isinstance(self.gamma, str):
            return self
        X = np.asarray(X, dtype=np.float64)
        var = X.var()
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return replace(self, gamma=float(gamma))

    @property
    def gamma_value(self) -> float:
        if isinstance(self.gamma, str):
            raise ClassifierError("gamma='scale' must be resolved against training data first")
        return float(self.gamma)


def kernel_eval(spec: KernelSpec, a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ClassifierError(f"kernel inputs must be equal-length vectors, got {a.shape} and {b.shape}")
    if spec.kind == "linear":
        return float(np.dot(a, b))
    if spec.kind == "hist_intersection":
        if (a < 0).any() or (b < 0).any():
            raise ClassifierError("histogram intersection needs non-negative inputs")
        return float(np.minimum(a, b).sum())
    if spec.kind == "rbf":
        return float(np.exp(-spec.gamma_value * np.sum((a - b) ** 2)))
    if spec.kind == "poly":
        return float((spec.gamma_value * np.dot(a, b) + spec.coef0) ** spec.degree)
    return float(np.tanh(spec.gamma_value * np.dot(a, b) + spec.coef0))


def gram_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Kernel values between the rows of ``X`` and ``Y`` (``Y`` defaults to ``X``)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    same = Y is None
    Y = X if same else np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.size == 0 or Y.size == 0:
        return np.zeros((X.shape[0] if X.ndim == 2 else 0, Y.shape[0] if Y.ndim == 2 else 0))
    if X.shape[1] != Y.shape[1]:
        raise ClassifierError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == "hist_intersection":
        if (X < 0).any() or (Y < 0).any():
            raise ClassifierError("histogram intersection needs non-negative inputs")
        K = _native.hist_intersection_gram(X, Y)
    elif spec.kind == "rbf":
        xx = np.einsum("ij,ij->i", X, X)
        yy = xx if same else np.einsum("ij,ij->i", Y, Y)
        d2 = np.maximum(xx[:, None] + yy[None, :] - 2.0 * (X @ Y.T), 0.0)
        if same:
            np.fill_diagonal(d2, 0.0)
        K = np.exp(-spec.gamma_value * d2)
    else:
        K = X @ Y.T
        if spec.kind == "poly":
            K = (spec.gamma_value * K + spec.coef0) ** spec.degree
        elif spec.kind == "sigmoid":
            K = np.tanh(spec.gamma_value * K + spec.coef0)
    if same:
        K = 0.5 * (K + K.T)
    return K


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ClassifierError(f"X must be 2-D with one row per label, got {X.shape} and {len(y)} labels")
    if not np.isfinite(X).all():
        raise ClassifierError("features contain non-finite values")
    return X, y


def _check_query(X, dim):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dim:
        raise ClassifierError(f"model expects dimension {dim}, got {X.shape[1]}")
    return X, single


# ---------------------------------------------------------------- SVM

@dataclass
class SvmModel:
    """One-vs-rest SVM sharing one pool of support vectors.

    Row ``c`` of ``dual_coef`` holds ``alpha_i * y_i`` of sub-problem ``c``
    (zero for rows that are not its support vectors).
    """

    kernel: KernelSpec
    classes: np.ndarray
    C: float
    support_vectors: np.ndarray = field(repr=False)
    dual_coef: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    n_iter: list[int] = field(default_factory=list)
    violation: list[float] = field(default_factory=list)

    def support_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.dual_coef[c] != 0)

    def decision_function(self, X) -> np.ndarray:
        X, single = _check_query(X, self.support_vectors.shape[1])
        K = gram_matrix(self.kernel, X, self.support_vectors)
        scores = K @ self.dual_coef.T + self.bias[None, :]
        return scores[0] if single else scores

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "svm",
            "kernel": asdict(self.kernel),
            "classes": self.classes.tolist(),
            "C": self.C,
            "dim": int(self.support_vectors.shape[1]),
            "support_vectors": self.support_vectors.ravel().tolist(),
            "sub_problems": [
                {"support": self.support_indices(c).tolist(),
                 "dual_coef": self.dual_coef[c, self.support_indices(c)].tolist(),
                 "bias": float(self.bias[c])}
                for c in range(len(self.classes))
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SvmModel":
        sv = np.asarray(doc["support_vectors"], dtype=np.float64).reshape(-1, doc["dim"])
        nc = len(doc["classes"])
        coef = np.zeros((nc, len(sv)))
        bias = np.zeros(nc)
        for c, sp in enumerate(doc["sub_problems"]):
            coef[c, sp["support"]] = sp["dual_coef"]
            bias[c] = sp["bias"]
        return cls(KernelSpec(**doc["kernel"]), np.asarray(doc["classes"], dtype=np.int64),
                   float(doc["C"]), sv, coef, bias)


def _check_dual(alpha, yb, C):
    # box and equality constraints of the dual; a violation means a solver bug
    slack = 1e-9 * max(1.0, C)
    if alpha.min() < -slack or alpha.max() > C + slack:
        raise AssertionError(f"dual variables left the box [0, {C}]")
    if abs(float(alpha @ yb)) > 1e-8 * max(1.0, C * len(alpha)):
        raise AssertionError(f"dual equality constraint violated: sum(alpha*y) = {alpha @ yb}")


def train_svm(X, y, kernel: KernelSpec = KernelSpec(), C: float = 1.0, tol: float = 1e-3,
              max_iter: int | None = None) -> SvmModel:
    """One-vs-rest soft-margin SVM, each binary dual solved by pairwise (SMO) updates.

    ``max_iter`` defaults to ten updates per training sample.
    """
    X, y = _check_xy(X, y)
    if not C > 0:
        raise ClassifierError(f"C must be positive, got {C}")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ClassifierError("SVM training needs at least two classes")
    kernel = kernel.resolve(X)
    K = gram_matrix(kernel, X)
    n = len(y)
    cap = 10 * n if max_iter is None else max_iter
    coefs, biases, iters, viol = [], [], [], []
    for c in classes:
        yb = np.where(y == c, 1.0, -1.0)
        alpha, b, it, v = _native.smo_solve(K, yb, float(C), float(tol), int(cap))
        _check_dual(alpha, yb, C)
        if v >= tol:
            log.warning("SVM sub-problem for class %d stopped at the iteration cap "
                        "(KKT violation %.3g)", c, v)
        alpha = np.where(alpha > SV_THRESHOLD, alpha, 0.0)
        coefs.append(alpha * yb)
        biases.append(b)
        iters.append(int(it))
        viol.append(float(v))
    coef = np.vstack(coefs)
    used = np.flatnonzero(np.any(coef != 0, axis=0))
    return SvmModel(kernel, classes, float(C), X[used].copy(), coef[:, used], np.asarray(biases),
                    iters, viol)


def predict_svm(model: SvmModel, v):
    """(class, per-class decision values); ties go to the lowest class index."""
    scores = model.decision_function(v)
    if scores.ndim == 1:
        return int(model.classes[int(np.argmax(scores))]), scores
    return model.classes[np.argmax(scores, axis=1)], scores


# ---------------------------------------------------------------- k-NN

@dataclass
class KnnModel:
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    k: int = 5
    num_classes: int = 0

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "type": "knn", "k": self.k,
                "num_classes": self.num_classes, "dim": int(self.X.shape[1]),
                "X": self.X.ravel().tolist(), "y": self.y.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "KnnModel":
        X = np.asarray(doc["X"], dtype=np.float64).reshape(-1, doc["dim"])
        return cls(X, np.asarray(doc["y"], dtype=np.int64), int(doc["k"]), int(doc["num_classes"]))


def train_knn(X, y, k: int = 5) -> KnnModel:
    X, y = _check_xy(X, y)
    if len(X) == 0:
        raise ClassifierError("k-NN needs a non-empty training set")
    if not 1 <= k <= len(X):
        raise ClassifierError(f"k must lie in [1, {len(X)}], got {k}")
    return KnnModel(X.copy(), y.copy(), int(k), int(y.max()) + 1)


def _knn_one(model: KnnModel, q: np.ndarray, approx: np.ndarray) -> tuple[int, np.ndarray]:
    kth = np.partition(approx, model.k - 1)[model.k - 1]
    slack = 1e-9 * (approx.max() + 1.0)
    cand = np.flatnonzero(approx <= kth + slack)
    exact = ((model.X[cand] - q[None, :]) ** 2).sum(axis=1)
    order = cand[np.lexsort((cand, exact))][: model.k]
    votes = np.bincount(model.y[order], minlength=model.num_classes).astype(np.float64)
    return int(np.argmax(votes)), votes / model.k


def predict_knn(model: KnnModel, v):
    """Majority label among the k nearest training points.

    Distance ties go to the lower training index, vote ties to the lower
    class. Returns (class, vote fractions per class).
    """
    Q, single = _check_query(v, model.X.shape[1])
    xx = np.einsum("ij,ij->i", model.X, model.X)
    approx = np.maximum(xx[None, :] - 2.0 * Q @ model.X.T + np.einsum("ij,ij->i", Q, Q)[:, None], 0.0)
    results = [_knn_one(model, Q[i], approx[i]) for i in range(len(Q))]
    labels = np.array([r[0] for r in results], dtype=np.int64)
    scores = np.vstack([r[1] for r in results])
    if single:
        return int(labels[0]), scores[0]
    return labels, scores


# ---------------------------------------------------------------- logistic regression

@dataclass
class LogRegModel:
    weights: np.ndarray = field(repr=False)  # (classes, dim)
    bias: np.ndarray = field(repr=False)
    l2_strength: float = 0.0
    objective: list[float] = field(default_factory=list, repr=False)

    def logits(self, X) -> np.ndarray:
        X, single = _check_query(X, self.weights.shape[1])
        z = X @ self.weights.T + self.bias[None, :]
        return z[0] if single else z

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "type": "logreg",
                "classes": self.weights.shape[0], "dim": self.weights.shape[1],
                "weights": self.weights.ravel().tolist(), "bias": self.bias.tolist(),
                "l2_strength": self.l2_strength}

    @classmethod
    def from_json(cls, doc: dict) -> "LogRegModel":
        W = np.asarray(doc["weights"], dtype=np.float64).reshape(doc["classes"], doc["dim"])
        return cls(W, np.asarray(doc["bias"], dtype=np.float64), float(doc["l2_strength"]))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def logreg_objective(W, b, X, Y, l2):
    """Mean cross-entropy plus ``l2 / 2 * ||W||^2`` and its gradient."""
    n = X.shape[0]
    z = X @ W.T + b[None, :]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float((lse - (z * Y).sum(axis=1)).mean() + 0.5 * l2 * np.sum(W * W))
    R = (softmax(z) - Y) / n
    return loss, R.T @ X + l2 * W, R.sum(axis=0)


def _lipschitz(X, l2) -> float:
    Xa = np.hstack([X, np.ones((len(X), 1))])
    G = Xa.T @ Xa if Xa.shape[1] <= Xa.shape[0] else Xa @ Xa.T
    return 0.5 * float(np.linalg.eigvalsh(G)[-1]) / len(X) + l2


def train_logreg(X, y, l2_strength: float = 1e-3, learning_rate: float | None = None,
                 max_iter: int = 1000, tol: float = 1e-5, num_classes: int | None = None) -> LogRegModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Without ``learning_rate`` the step is ``1/L`` for the gradient's
    Lipschitz constant, which makes every step decrease the objective.
    """
    X, y = _check_xy(X, y)
    if len(np.unique(y)) < 2:
        raise ClassifierError("logistic regression needs at least two classes")
    nc = num_classes or int(y.max()) + 1
    Y = np.eye(nc)[y]
    W = np.zeros((nc, X.shape[1]))
    b = np.zeros(nc)
    lr = learning_rate if learning_rate is not None else 1.0 / _lipschitz(X, l2_strength)
    loss, gW, gb = logreg_objective(W, b, X, Y, l2_strength)
    history = [loss]
    for it in range(max_iter):
        if np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)) < tol:
            break
        W = W - lr * gW
        b = b - lr * gb
        loss, gW, gb = logreg_objective(W, b, X, Y, l2_strength)
        if learning_rate is None and loss > history[-1] + 1e-12 * max(1.0, abs(history[-1])):
            raise AssertionError(f"logistic objective increased at step {it}")
        history.append(loss)
    return LogRegModel(W, b, float(l2_strength), history)


def predict_logreg(model: LogRegModel, v):
    """(class, softmax probabilities)."""
    p = softmax(model.logits(v))
    if p.ndim == 1:
        return int(np.argmax(p)), p
    return np.argmax(p, axis=1), p


# ---------------------------------------------------------------- serialization

def classifier_from_json(doc: dict):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ClassifierError(f"unsupported classifier schema {doc.get('schema_version')!r}")
    kinds = {"svm": SvmModel, "knn": KnnModel, "logreg": LogRegModel}
    if doc.get("type") not in kinds:
        raise ClassifierError(f"unknown classifier type {doc.get('type')!r}")
    return kinds[doc["type"]].from_json(doc)


def save_classifier(model, path):
    Path(path).write_text(json.dumps(model.to_json(), sort_keys=True))


def load_classifier(path):
    return classifier_from_json(json.loads(Path(path).read_text()))


def predict(model, X):
    """Dispatch to the model's predictor; returns (labels, scores)."""
    if isinstance(model, SvmModel):
        return predict_svm(model, X)
    if isinstance(model, KnnModel):
        return predict_knn(model, X)
    return predict_logreg(model, X)
