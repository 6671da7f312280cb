"""Timing-window detectors: a from-scratch CART random forest (the operating
detector) and a logistic linear baseline.

Forest rules: Gini impurity, bootstrap of size N, floor(sqrt(d)) candidate
features per split drawn without replacement, unlimited depth, minimum 2
samples to split, leaf score = class-1 fraction, forest score = mean over
trees. Gini ties break toward the lowest feature index, then the lowest
threshold. Rows are canonically sorted before the seeded bootstrap, so row
order never changes the model; tree t draws from SeedSequence([seed, t]),
so worker count never changes it either.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._io import read_blocks, read_magic, write_blocks
from .features import NormalizationStats

RF_MAGIC = "QUACK-RF v1"
LIN_MAGIC = "QUACK-LIN v1"
DEFAULT_N_TREES = 300

_LEAF = -1


class DetectorError(ValueError):
    """Invalid training input, score input, or model file."""


@dataclass
class DecisionTree:
    """Flat-array binary tree; feature == -1 marks a leaf."""

    feature: np.ndarray  # (n_nodes,) int32
    threshold: np.ndarray  # (n_nodes,) float64, nan at leaves
    left: np.ndarray  # (n_nodes,) int32
    right: np.ndarray  # (n_nodes,) int32
    value: np.ndarray  # (n_nodes,) float64, class-1 fraction
    n_node_samples: np.ndarray  # (n_nodes,) int64

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def scores(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            act = np.flatnonzero(f >= 0)
            if act.size == 0:
                break
            cur = node[act]
            go_left = X[rows[act], f[act]] <= self.threshold[cur]
            node[act] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]


@dataclass
class RandomForestModel:
    trees: list
    dimension: int
    seed: int
    fingerprint: str
    n_trees: int = field(init=False)

    def __post_init__(self) -> None:
        self.n_trees = len(self.trees)
        for t in self.trees:
            if np.any(t.feature >= self.dimension):
                raise DetectorError("tree references a feature outside the model dimension")


@dataclass
class LinearBaselineModel:
    weights: np.ndarray
    bias: float
    normalizer: NormalizationStats
    seed: int
    fingerprint: str

    def __post_init__(self) -> None:
        if len(self.weights) != self.normalizer.dimension:
            raise DetectorError("weight dimension does not match normalizer")


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Primary key column 0, then the rest, label last; lexsort wants the
    # primary key in the final row.
    keys = np.vstack([y[None, :].astype(np.float64), X.T[::-1]])
    return np.lexsort(keys)


def _train_fingerprint(Xc: np.ndarray, yc: np.ndarray, seed: int) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(Xc).tobytes())
    digest.update(np.ascontiguousarray(yc).tobytes())
    digest.update(str(int(seed)).encode())
    return digest.hexdigest()


def _best_split(Xn: np.ndarray, yn: np.ndarray, feats: np.ndarray):
    """Exhaustive Gini-optimal cut over the candidate features.

    Impurity is compared as an exactly-computed integer numerator divided by
    its integer denominator in one rounding step, so equal impurities compare
    equal and the (feature index, threshold) tie rule is honest.
    Returns (feature, threshold) or None if no candidate separates the node.
    """
    m = len(yn)
    order = np.argsort(Xn, axis=0, kind="stable")
    V = np.take_along_axis(Xn, order, axis=0)
    Y = yn[order].astype(np.int64)
    c1 = np.cumsum(Y, axis=0)
    n1 = c1[-1]
    ln = np.arange(1, m, dtype=np.int64)[:, None]
    rn = m - ln
    l1 = c1[:-1]
    r1 = n1 - l1
    num = l1 * (ln - l1) * rn + r1 * (rn - r1) * ln
    G = num / (ln * rn)
    G[V[1:] <= V[:-1]] = np.inf
    col_best = np.argmin(G, axis=0)  # first minimum: lowest threshold
    col_G = G[col_best, np.arange(G.shape[1])]
    j = int(np.argmin(col_G))  # features pre-sorted: first minimum = lowest index
    if not np.isfinite(col_G[j]):
        return None
    i = int(col_best[j])
    lo, hi = V[i, j], V[i + 1, j]
    thr = (lo + hi) / 2.0
    if thr >= hi:  # midpoint rounded up to the right value
        thr = lo
    return int(feats[j]), float(thr)


def _grow_tree(Xc: np.ndarray, yc: np.ndarray, rng: np.random.Generator) -> DecisionTree:
    n, d = Xc.shape
    k = max(1, math.floor(math.sqrt(d)))
    boot = rng.integers(0, n, size=n)
    feature = [0]
    threshold = [0.0]
    left = [0]
    right = [0]
    value = [0.0]
    n_samples = [0]

    def _new_node() -> int:
        feature.append(0)
        threshold.append(0.0)
        left.append(0)
        right.append(0)
        value.append(0.0)
        n_samples.append(0)
        return len(feature) - 1

    stack = [(boot, 0)]
    while stack:
        idx, nid = stack.pop()
        yn = yc[idx]
        m = len(idx)
        ones = int(yn.sum())
        n_samples[nid] = m
        value[nid] = ones / m
        split = None
        if 0 < ones < m and m >= 2:
            feats = np.sort(rng.choice(d, size=k, replace=False))
            split = _best_split(Xc[np.ix_(idx, feats)], yn, feats)
        if split is None:
            feature[nid] = _LEAF
            threshold[nid] = math.nan
            continue
        f, thr = split
        feature[nid] = f
        threshold[nid] = thr
        go_left = Xc[idx, f] <= thr
        lid = _new_node()
        rid = _new_node()
        left[nid] = lid
        right[nid] = rid
        # Push right first so the left child is processed (and draws its
        # feature candidates) next: deterministic preorder.
        stack.append((idx[~go_left], rid))
        stack.append((idx[go_left], lid))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        n_node_samples=np.array(n_samples, dtype=np.int64),
    )


def _check_training_input(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise DetectorError("training matrix must be non-empty and 2-D")
    if len(y) != len(X):
        raise DetectorError("labels misaligned with rows")
    if not np.all(np.isfinite(X)):
        raise DetectorError("training matrix contains non-finite values")
    y = y.astype(np.int8)
    classes = np.unique(y)
    if not np.all(np.isin(classes, [0, 1])):
        raise DetectorError("labels must be 0 (human) or 1 (synthetic)")
    if len(classes) < 2:
        raise DetectorError("single-class training input")
    return X, y


def train_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = DEFAULT_N_TREES,
    seed: int = 0,
    n_workers: int = 1,
) -> RandomForestModel:
    """Fit the forest; output is identical for any row order or worker count."""
    X, y = _check_training_input(X, y)
    if n_trees < 1:
        raise DetectorError("n_trees must be >= 1")
    if seed < 0:
        raise DetectorError("seed must be non-negative")
    order = _canonical_order(X, y)
    Xc = np.ascontiguousarray(X[order])
    yc = y[order]

    def _tree(t: int) -> DecisionTree:
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        return _grow_tree(Xc, yc, rng)

    if n_workers > 1:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=n_workers)(delayed(_tree)(t) for t in range(n_trees))
    else:
        trees = [_tree(t) for t in range(n_trees)]
    return RandomForestModel(
        trees=trees,
        dimension=X.shape[1],
        seed=seed,
        fingerprint=_train_fingerprint(Xc, yc, seed),
    )


def predict_scores(model: RandomForestModel, X: np.ndarray) -> np.ndarray:
    """Mean over trees of leaf class-1 (synthetic) fractions, in [0, 1]."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dimension:
        raise DetectorError(
            f"expected (n, {model.dimension}) matrix, got {X.shape}"
        )
    total = np.zeros(len(X), dtype=np.float64)
    for tree in model.trees:
        total += tree.scores(X)
    return total / len(model.trees)


def predict_score(model: RandomForestModel, window_vector: np.ndarray) -> float:
    vec = np.asarray(window_vector, dtype=np.float64).reshape(1, -1)
    return float(predict_scores(model, vec)[0])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(weights: np.ndarray, bias: float, Xn: np.ndarray, y: np.ndarray) -> float:
    z = Xn @ weights + bias
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_gradient(
    weights: np.ndarray, bias: float, Xn: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    resid = _sigmoid(Xn @ weights + bias) - y
    return Xn.T @ resid / len(y), float(np.mean(resid))


def train_linear_baseline(
    X: np.ndarray,
    y: np.ndarray,
    normalizer: NormalizationStats,
    epochs: int = 200,
    step_size: float = 0.5,
    seed: int = 0,
) -> LinearBaselineModel:
    """Full-batch gradient descent on log-loss over normalized features.

    Weights start at zero, so zero epochs score 0.5 everywhere."""
    X, y = _check_training_input(X, y)
    if X.shape[1] != normalizer.dimension:
        raise DetectorError("normalizer dimension does not match matrix")
    active = ~normalizer.pass_through
    Xn = X.copy()
    Xn[:, active] = (X[:, active] - normalizer.mean[active]) / normalizer.sd[active]
    yf = y.astype(np.float64)
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        gw, gb = logistic_gradient(w, b, Xn, yf)
        w -= step_size * gw
        b -= step_size * gb
    order = _canonical_order(X, y)
    return LinearBaselineModel(
        weights=w,
        bias=b,
        normalizer=normalizer,
        seed=seed,
        fingerprint=_train_fingerprint(X[order], y[order], seed),
    )


def predict_scores_linear(model: LinearBaselineModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.weights):
        raise DetectorError(f"expected (n, {len(model.weights)}) matrix, got {X.shape}")
    stats = model.normalizer
    active = ~stats.pass_through
    Xn = X.copy()
    Xn[:, active] = (X[:, active] - stats.mean[active]) / stats.sd[active]
    return _sigmoid(Xn @ model.weights + model.bias)


def save_model(model, path: str | Path) -> int:
    """Write a detector model file; returns its byte size."""
    if isinstance(model, RandomForestModel):
        offsets = np.cumsum([0] + [t.n_nodes for t in model.trees]).astype(np.int64)
        arrays = {
            "tree_offsets": offsets,
            "feature": np.concatenate([t.feature for t in model.trees]),
            "threshold": np.concatenate([t.threshold for t in model.trees]),
            "left": np.concatenate([t.left for t in model.trees]),
            "right": np.concatenate([t.right for t in model.trees]),
            "value": np.concatenate([t.value for t in model.trees]),
            "n_node_samples": np.concatenate([t.n_node_samples for t in model.trees]),
        }
        meta = {
            "kind": "random_forest",
            "n_trees": model.n_trees,
            "dimension": model.dimension,
            "seed": model.seed,
            "fingerprint": model.fingerprint,
        }
        return write_blocks(path, RF_MAGIC, meta, arrays)
    if isinstance(model, LinearBaselineModel):
        arrays = {
            "weights": model.weights,
            "norm_mean": model.normalizer.mean,
            "norm_sd": model.normalizer.sd,
            "norm_pass": model.normalizer.pass_through,
        }
        meta = {
            "kind": "linear_baseline",
            "bias": model.bias,
            "seed": model.seed,
            "fingerprint": model.fingerprint,
        }
        return write_blocks(path, LIN_MAGIC, meta, arrays)
    raise DetectorError(f"cannot save model of type {type(model).__name__}")


def load_model(path: str | Path):
    magic = read_magic(path)
    if magic == RF_MAGIC:
        meta, arrays = read_blocks(path, RF_MAGIC)
        offsets = arrays["tree_offsets"]
        trees = []
        for t in range(int(meta["n_trees"])):
            lo, hi = int(offsets[t]), int(offsets[t + 1])
            trees.append(
                DecisionTree(
                    feature=arrays["feature"][lo:hi],
                    threshold=arrays["threshold"][lo:hi],
                    left=arrays["left"][lo:hi],
                    right=arrays["right"][lo:hi],
                    value=arrays["value"][lo:hi],
                    n_node_samples=arrays["n_node_samples"][lo:hi],
                )
            )
        return RandomForestModel(
            trees=trees,
            dimension=int(meta["dimension"]),
            seed=int(meta["seed"]),
            fingerprint=str(meta["fingerprint"]),
        )
    if magic == LIN_MAGIC:
        meta, arrays = read_blocks(path, LIN_MAGIC)
        stats = NormalizationStats(
            arrays["norm_mean"], arrays["norm_sd"], arrays["norm_pass"]
        )
        return LinearBaselineModel(
            weights=arrays["weights"],
            bias=float(meta["bias"]),
            normalizer=stats,
            seed=int(meta["seed"]),
            fingerprint=str(meta["fingerprint"]),
        )
    raise DetectorError(f"{path}: unrecognized model magic {magic!r}")


def serialize_model(model) -> bytes:
    """In-memory image identical to the on-disk format (for equality checks)."""
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".bin") as tmp:
        save_model(model, tmp.name)
        return Path(tmp.name).read_bytes()


def model_info(path: str | Path) -> dict:
    """Summary of a saved model: kind, shape, byte size, fingerprint."""
    model = load_model(path)
    size = Path(path).stat().st_size
    if isinstance(model, RandomForestModel):
        return {
            "kind": "random_forest",
            "n_trees": model.n_trees,
            "dimension": model.dimension,
            "byte_size": size,
            "seed": model.seed,
            "fingerprint": model.fingerprint,
            "n_nodes": int(sum(t.n_nodes for t in model.trees)),
        }
    return {
        "kind": "linear_baseline",
        "dimension": len(model.weights),
        "byte_size": size,
        "seed": model.seed,
        "fingerprint": model.fingerprint,
    }


class RandomForestDetector(BaseEstimator, ClassifierMixin):
    """Estimator-style wrapper around the forest trainer.

    predict_proba column 1 (and decision scores) is the synthetic-class
    probability; predict thresholds it at `threshold`."""

    def __init__(self, n_trees: int = DEFAULT_N_TREES, seed: int = 0, threshold: float = 0.5, n_workers: int = 1):
        self.n_trees = n_trees
        self.seed = seed
        self.threshold = threshold
        self.n_workers = n_workers

    def fit(self, X, y):
        self.model_ = train_random_forest(
            X, y, n_trees=self.n_trees, seed=self.seed, n_workers=self.n_workers
        )
        self.classes_ = np.array([0, 1])
        return self

    def _scores(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise DetectorError("detector is not fitted")
        return predict_scores(self.model_, X)

    def predict_proba(self, X):
        s = self._scores(X)
        return np.column_stack([1.0 - s, s])

    def decision_function(self, X):
        return self._scores(X)

    def predict(self, X):
        return (self._scores(X) >= self.threshold).astype(np.int8)


class LinearBaselineDetector(BaseEstimator, ClassifierMixin):
    def __init__(self, epochs: int = 200, step_size: float = 0.5, seed: int = 0, threshold: float = 0.5):
        self.epochs = epochs
        self.step_size = step_size
        self.seed = seed
        self.threshold = threshold

    def fit(self, X, y):
        from .features import TimingNormalizer

        X = np.asarray(X, dtype=np.float64)
        norm = TimingNormalizer().fit(X)
        stats = NormalizationStats(norm.mean_, norm.sd_, norm.pass_through_)
        self.model_ = train_linear_baseline(
            X, y, stats, epochs=self.epochs, step_size=self.step_size, seed=self.seed
        )
        self.classes_ = np.array([0, 1])
        return self

    def _scores(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise DetectorError("detector is not fitted")
        return predict_scores_linear(self.model_, X)

    def predict_proba(self, X):
        s = self._scores(X)
        return np.column_stack([1.0 - s, s])

    def decision_function(self, X):
        return self._scores(X)

    def predict(self, X):
        return (self._scores(X) >= self.threshold).astype(np.int8)
