"""Gradient-boosted regression trees with per-tree split accounting.

Squared-error boosting: the ensemble starts at the target mean and each round
fits a depth-limited CART tree to the current residuals by exact greedy
variance reduction.  Every internal node is recorded in a pre-order split log
of ``(tree, depth, feature)`` triples, which is what the split-count and
first-mover diagnostics read.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from dashlab.errors import ParameterError
from dashlab.pool import ordered_map
from dashlab.schemas import EnsembleDocument, TreeDocument, TreeNodeDocument
from dashlab.synthdata import STREAM_COLUMNS, STREAM_ROWS, Dataset, make_rng

logger = structlog.get_logger()

# Splits must reduce the residual sum of squares by more than this.
_MIN_GAIN = 1e-12

# (lo, hi] interval per feature on a root-to-leaf path.
LeafPath = Tuple[float, Dict[int, Tuple[float, float]]]


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 100
    max_depth: int = 1
    learning_rate: float = 0.1
    subsample: float = 1.0
    colsample: float = 1.0
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ParameterError(f"rounds must be at least 1, got {self.rounds}")
        if self.max_depth < 1:
            raise ParameterError(f"max_depth must be at least 1, got {self.max_depth}")
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("subsample", "colsample"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ParameterError(f"{name} must be in (0, 1], got {value}")
        if self.min_leaf < 1:
            raise ParameterError(f"min_leaf must be at least 1, got {self.min_leaf}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")

    @property
    def deterministic(self) -> bool:
        """True when no subsampling is configured and the seed is irrelevant."""
        return self.subsample == 1.0 and self.colsample == 1.0

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), "seed": seed})


@dataclass(eq=False)
class Tree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_internal(self) -> int:
        return int(np.count_nonzero(self.feature >= 0))

    def features_used(self) -> FrozenSet[int]:
        return frozenset(int(f) for f in self.feature[self.feature >= 0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf value reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        while True:
            feat = self.feature[node]
            active = np.nonzero(feat >= 0)[0]
            if active.size == 0:
                return self.value[node]
            current = node[active]
            go_left = X[active, feat[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def leaf_paths(self) -> List[LeafPath]:
        """(value, {feature: (lo, hi]}) for every leaf, in pre-order."""
        paths: List[LeafPath] = []
        stack = [(0, {})]
        while stack:
            node, bounds = stack.pop()
            f = int(self.feature[node])
            if f < 0:
                paths.append((float(self.value[node]), bounds))
                continue
            t = float(self.threshold[node])
            lo, hi = bounds.get(f, (-math.inf, math.inf))
            right = dict(bounds)
            right[f] = (max(lo, t), hi)
            left = dict(bounds)
            left[f] = (lo, min(hi, t))
            stack.append((int(self.right[node]), right))
            stack.append((int(self.left[node]), left))
        return paths

    def to_document(self) -> TreeDocument:
        nodes = []
        for i in range(self.n_nodes):
            leaf = self.feature[i] < 0
            nodes.append(TreeNodeDocument(
                feature=None if leaf else int(self.feature[i]),
                threshold=None if leaf else float(self.threshold[i]),
                left=None if leaf else int(self.left[i]),
                right=None if leaf else int(self.right[i]),
                value=float(self.value[i]),
                cover=int(self.cover[i]),
                depth=int(self.depth[i]),
            ))
        return TreeDocument(nodes=nodes)

    @classmethod
    def from_document(cls, doc: TreeDocument) -> "Tree":
        nodes = doc.nodes
        return cls(
            feature=np.array([-1 if n.feature is None else n.feature for n in nodes], dtype=np.intp),
            threshold=np.array([math.nan if n.threshold is None else n.threshold for n in nodes]),
            left=np.array([-1 if n.left is None else n.left for n in nodes], dtype=np.intp),
            right=np.array([-1 if n.right is None else n.right for n in nodes], dtype=np.intp),
            value=np.array([n.value for n in nodes], dtype=np.float64),
            cover=np.array([n.cover for n in nodes], dtype=np.int64),
            depth=np.array([n.depth for n in nodes], dtype=np.int64),
        )


@dataclass(eq=False)
class Ensemble:
    """Fitted boosted model: base_score + learning_rate * sum of tree outputs."""

    base_score: float
    learning_rate: float
    trees: Tuple[Tree, ...]
    split_log: Tuple[Tuple[int, int, int], ...]
    config: TrainConfig
    seed: int
    n_features: int
    feature_names: Tuple[str, ...] = ()
    degenerate: bool = False

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_document(self, include_seed: bool = True) -> EnsembleDocument:
        return EnsembleDocument(
            base_score=self.base_score,
            learning_rate=self.learning_rate,
            trees=[t.to_document() for t in self.trees],
            split_log=[list(entry) for entry in self.split_log],
            config=asdict(self.config) if include_seed else {**asdict(self.config), "seed": None},
            seed=self.seed if include_seed else None,
            n_features=self.n_features,
            feature_names=list(self.feature_names),
            degenerate=self.degenerate,
        )

    def to_json(self, include_seed: bool = True) -> str:
        """Serialized model; ``include_seed=False`` drops the seed echo."""
        return json.dumps(self.to_document(include_seed).model_dump(), indent=2)

    @classmethod
    def from_document(cls, doc: EnsembleDocument) -> "Ensemble":
        config = TrainConfig(**{**doc.config, "seed": doc.config.get("seed") or 0})
        return cls(
            base_score=doc.base_score,
            learning_rate=doc.learning_rate,
            trees=tuple(Tree.from_document(t) for t in doc.trees),
            split_log=tuple(tuple(entry) for entry in doc.split_log),
            config=config,
            seed=doc.seed or 0,
            n_features=doc.n_features,
            feature_names=tuple(doc.feature_names),
            degenerate=doc.degenerate,
        )


class _TreeBuilder:
    """Grows one tree over a row subsample by exact greedy search."""

    def __init__(self, X: np.ndarray, residual: np.ndarray, columns: np.ndarray,
                 max_depth: int, min_leaf: int, tree_index: int, split_log: list):
        self.X = X
        self.residual = residual
        self.columns = columns
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.tree_index = tree_index
        self.split_log = split_log
        self.nodes: List[list] = []

    def build(self, rows: np.ndarray) -> Tree:
        self._grow(rows, 0)
        feature, threshold, left, right, value, cover, depth = zip(*self.nodes)
        return Tree(
            feature=np.array(feature, dtype=np.intp),
            threshold=np.array(threshold, dtype=np.float64),
            left=np.array(left, dtype=np.intp),
            right=np.array(right, dtype=np.intp),
            value=np.array(value, dtype=np.float64),
            cover=np.array(cover, dtype=np.int64),
            depth=np.array(depth, dtype=np.int64),
        )

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        node_id = len(self.nodes)
        self.nodes.append([-1, math.nan, -1, -1, float(self.residual[rows].mean()), rows.size, depth])
        if depth >= self.max_depth or rows.size < 2 * self.min_leaf:
            return node_id
        split = self._best_split(rows)
        if split is None:
            return node_id
        feature, threshold = split
        self.split_log.append((self.tree_index, depth, feature))
        goes_left = self.X[rows, feature] <= threshold
        left = self._grow(rows[goes_left], depth + 1)
        right = self._grow(rows[~goes_left], depth + 1)
        self.nodes[node_id][:4] = [feature, threshold, left, right]
        return node_id

    def _best_split(self, rows: np.ndarray) -> Optional[Tuple[int, float]]:
        n = rows.size
        r = self.residual[rows]
        r = r - r.mean()
        total = r.sum()
        parent = total * total / n
        lo, hi = self.min_leaf - 1, n - self.min_leaf - 1
        n_left = np.arange(lo + 1, hi + 2, dtype=np.float64)
        n_right = n - n_left

        best_gain, best = _MIN_GAIN, None
        for f in self.columns:
            x = self.X[rows, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            csum = np.cumsum(r[order])[lo:hi + 1]
            gain = csum * csum / n_left + (total - csum) ** 2 / n_right - parent
            gain[xs[lo:hi + 1] == xs[lo + 1:hi + 2]] = -np.inf
            i = int(np.argmax(gain))
            if gain[i] > best_gain:
                a, b = xs[lo + i], xs[lo + i + 1]
                threshold = a + (b - a) / 2.0
                if not a <= threshold < b:
                    threshold = a
                best_gain, best = float(gain[i]), (int(f), float(threshold))
        return best


def fit(dataset: Dataset, config: TrainConfig) -> Ensemble:
    """Fit ``config.rounds`` squared-error boosting rounds."""
    X, y = dataset.features, dataset.target
    n, p = X.shape
    if n < 2 * config.min_leaf:
        raise ParameterError(f"need at least {2 * config.min_leaf} rows, got {n}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ParameterError("features and target must be finite")

    common = dict(learning_rate=config.learning_rate, config=config, seed=config.seed,
                  n_features=p, feature_names=dataset.names)
    if np.ptp(y) == 0:
        logger.warning("constant_target", value=float(y[0]), rows=n)
        return Ensemble(base_score=float(y[0]), trees=(), split_log=(), degenerate=True, **common)

    n_rows = int(math.floor(config.subsample * n))
    n_cols = int(math.ceil(config.colsample * p))
    if n_rows < 2 * config.min_leaf:
        raise ParameterError(f"subsample leaves {n_rows} rows, fewer than 2*min_leaf")
    row_rng = make_rng(config.seed, STREAM_ROWS)
    col_rng = make_rng(config.seed, STREAM_COLUMNS)
    all_rows = np.arange(n)
    all_cols = np.arange(p)

    base_score = float(y.mean())
    prediction = np.full(n, base_score)
    trees: List[Tree] = []
    split_log: List[Tuple[int, int, int]] = []
    for t in range(config.rounds):
        rows = all_rows if n_rows == n else np.sort(row_rng.choice(n, size=n_rows, replace=False))
        cols = all_cols if n_cols == p else np.sort(col_rng.choice(p, size=n_cols, replace=False))
        residual = y - prediction
        tree = _TreeBuilder(X, residual, cols, config.max_depth, config.min_leaf, t, split_log).build(rows)
        prediction = prediction + config.learning_rate * tree.predict(X)
        trees.append(tree)
        logger.debug("tree_fitted", tree=t, nodes=tree.n_nodes, internal=tree.n_internal)

    logger.debug("ensemble_fitted", rounds=len(trees), splits=len(split_log), seed=config.seed)
    return Ensemble(base_score=base_score, trees=tuple(trees), split_log=tuple(split_log), **common)


def _fit_with_seed(seed: int, dataset: Dataset, config: TrainConfig,
                   data_factory: Optional[Callable[[int], Dataset]] = None) -> Ensemble:
    data = data_factory(seed) if data_factory is not None else dataset
    return fit(data, config.with_seed(seed))


def fit_many(dataset: Dataset, config: TrainConfig, seeds: Sequence[int], threads: int = 1,
             data_factory: Optional[Callable[[int], Dataset]] = None) -> List[Ensemble]:
    """Fit one ensemble per seed, ordered by seed position.

    ``data_factory(seed)`` replaces ``dataset`` with a fresh draw per model.
    """
    worker = partial(_fit_with_seed, dataset=dataset, config=config, data_factory=data_factory)
    return ordered_map(worker, list(seeds), threads)


def _check_width(ensemble: Ensemble, width: int):
    if width != ensemble.n_features:
        raise ParameterError(f"expected {ensemble.n_features} features, got {width}")


def predict_batch(ensemble: Ensemble, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError("predict_batch expects a 2-D matrix")
    _check_width(ensemble, X.shape[1])
    total = np.zeros(X.shape[0])
    for tree in ensemble.trees:
        total += tree.predict(X)
    return ensemble.base_score + ensemble.learning_rate * total


def predict(ensemble: Ensemble, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("predict expects a feature vector")
    _check_width(ensemble, x.shape[0])
    return float(predict_batch(ensemble, x[np.newaxis, :])[0])


def split_counts(ensemble: Ensemble) -> np.ndarray:
    """Number of internal nodes splitting on each feature."""
    features = np.array([f for _, _, f in ensemble.split_log], dtype=np.intp)
    return np.bincount(features, minlength=ensemble.n_features)


def tree_feature_sets(ensemble: Ensemble) -> List[FrozenSet[int]]:
    return [tree.features_used() for tree in ensemble.trees]


def first_mover(ensemble: Ensemble, group_of: Sequence[Optional[int]],
                any_depth: bool = False) -> Dict[int, Optional[int]]:
    """Feature of the earliest root split falling in each group.

    Groups with no root-level split map to ``None``; ``any_depth`` widens the
    search to splits at every depth (first in tree order, then pre-order).
    """
    groups = sorted({g for g in group_of if g is not None and g >= 0})
    found: Dict[int, Optional[int]] = {g: None for g in groups}
    for _, depth, feature in ensemble.split_log:
        if depth > 0 and not any_depth:
            continue
        g = group_of[feature]
        if g is not None and g >= 0 and found[g] is None:
            found[g] = feature
    return found


def training_loss_path(ensemble: Ensemble, dataset: Dataset) -> np.ndarray:
    """Training MSE after 0, 1, ..., T rounds."""
    X, y = dataset.features, dataset.target
    prediction = np.full(X.shape[0], ensemble.base_score)
    losses = [float(np.mean((y - prediction) ** 2))]
    for tree in ensemble.trees:
        prediction = prediction + ensemble.learning_rate * tree.predict(X)
        losses.append(float(np.mean((y - prediction) ** 2)))
    return np.array(losses)


def save_model(ensemble: Ensemble, path: Union[str, Path]):
    Path(path).write_text(ensemble.to_json(), encoding="utf-8")
    logger.info("model_saved", path=str(path), trees=ensemble.n_trees)


def load_model(path: Union[str, Path]) -> Ensemble:
    doc = EnsembleDocument.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    return Ensemble.from_document(doc)
