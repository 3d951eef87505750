"""Per-model feature attributions for boosted ensembles.

SHAP values here are exact interventional Shapley values: the value of a
coalition S at point x is the mean, over background rows z, of the model at
the hybrid point taking S from x and the rest from z.  Trees are additive, so
each leaf is handled as its own game.  For a fixed (x, z) a leaf is reached
by the hybrid iff every path feature is satisfied by the source it is taken
from, which yields closed-form Shapley weights per leaf (see
``_tree_shap``).  ``brute_force_shap`` enumerates coalitions directly and is
the reference the fast path is tested against.
"""
import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from dashlab import metrics
from dashlab.boost import Ensemble, TrainConfig, fit, first_mover, predict_batch, split_counts
from dashlab.errors import ParameterError
from dashlab.pool import ordered_map
from dashlab.schemas import AttributionSidecar
from dashlab.synthdata import (STREAM_BACKGROUND, STREAM_PERMUTATION, Dataset, DgpConfig,
                               make_rng, sample_dataset)

logger = structlog.get_logger()

_FACTORIAL = np.array([math.factorial(k) for k in range(40)], dtype=np.float64)

BRUTE_FORCE_MAX_FEATURES = 12


class AttributionKind(str, Enum):
    LOCAL_SIGNED = "local_signed"
    GLOBAL_MEAN_ABS = "global_mean_abs"


class AttributionMethod(str, Enum):
    SHAP = "shap"
    PERMUTATION = "permutation"
    SPLIT_COUNT = "split_count"


@dataclass(eq=False)
class BackgroundSet:
    """Reference rows used to marginalize absent features."""
    rows: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ParameterError("background must contain at least one row")

    @property
    def B(self) -> int:
        return int(self.rows.shape[0])


@dataclass(eq=False)
class AttributionVector:
    values: np.ndarray
    kind: AttributionKind
    flagged: bool = False


@dataclass(eq=False)
class AttributionMatrix:
    """M x P global attributions, one row per trained model."""
    values: np.ndarray
    seeds: Tuple[int, ...]
    method: AttributionMethod = AttributionMethod.SHAP
    names: Tuple[str, ...] = ()
    eval_slice_seed: int = 0
    background_seed: int = 0
    group_of: Optional[Tuple[Optional[int], ...]] = None
    first_movers: Optional[Tuple[Tuple[Optional[int], ...], ...]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ParameterError("attribution matrix needs at least one row")
        if (self.values < 0).any():
            raise ParameterError("global attributions must be nonnegative")
        if len(self.seeds) != self.values.shape[0]:
            raise ParameterError("one seed per row is required")
        if not self.names:
            self.names = tuple(f"x{j}" for j in range(self.values.shape[1]))

    @property
    def M(self) -> int:
        return int(self.values.shape[0])

    @property
    def P(self) -> int:
        return int(self.values.shape[1])

    def take(self, rows: Sequence[int]) -> "AttributionMatrix":
        rows = list(rows)
        return AttributionMatrix(
            values=self.values[rows],
            seeds=tuple(self.seeds[i] for i in rows),
            method=self.method,
            names=self.names,
            eval_slice_seed=self.eval_slice_seed,
            background_seed=self.background_seed,
            group_of=self.group_of,
            first_movers=None if self.first_movers is None else tuple(self.first_movers[i] for i in rows),
        )


def sample_background(dataset: Dataset, size: int, seed: int) -> BackgroundSet:
    """``size`` rows drawn without replacement (all rows if fewer)."""
    if size < 1:
        raise ParameterError(f"background size must be positive, got {size}")
    size = min(size, dataset.n_samples)
    rows = make_rng(seed, STREAM_BACKGROUND).choice(dataset.n_samples, size=size, replace=False)
    return BackgroundSet(rows=dataset.features[np.sort(rows)], seed=seed)


def _tree_shap(tree, X: np.ndarray, Z: np.ndarray, n_features: int) -> np.ndarray:
    """Interventional Shapley values of one tree for every row of X.

    For a leaf with value v and path features F, let A be the features that
    only x satisfies and B those only z satisfies.  If some feature is
    satisfied by neither, the leaf is unreachable for every coalition.
    Otherwise the leaf game is v*[A in S, B disjoint from S], whose Shapley
    values are v*(a-1)!b!/(a+b)! on A and -v*a!(b-1)!/(a+b)! on B.
    """
    phi = np.zeros((X.shape[0], n_features))
    for value, bounds in tree.leaf_paths():
        if not bounds or value == 0.0:
            continue
        feats = np.fromiter(bounds.keys(), dtype=np.intp, count=len(bounds))
        lo = np.array([bounds[f][0] for f in feats])
        hi = np.array([bounds[f][1] for f in feats])
        sx = ((X[:, feats] > lo) & (X[:, feats] <= hi)).astype(np.float64)
        sz = ((Z[:, feats] > lo) & (Z[:, feats] <= hi)).astype(np.float64)
        a = sx @ (1.0 - sz).T
        b = (1.0 - sx) @ sz.T
        alive = ((1.0 - sx) @ (1.0 - sz).T) == 0
        ai = a.astype(np.intp)
        bi = b.astype(np.intp)
        denom = _FACTORIAL[ai + bi]
        w_a = np.where(alive & (ai > 0), value * _FACTORIAL[np.maximum(ai - 1, 0)] * _FACTORIAL[bi] / denom, 0.0)
        w_b = np.where(alive & (bi > 0), value * _FACTORIAL[ai] * _FACTORIAL[np.maximum(bi - 1, 0)] / denom, 0.0)
        phi[:, feats] += sx * (w_a @ (1.0 - sz)) - (1.0 - sx) * (w_b @ sz)
    return phi / Z.shape[0]


def shap_values(ensemble: Ensemble, X: np.ndarray, background: BackgroundSet) -> np.ndarray:
    """Local SHAP matrix (rows of X by features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ensemble.n_features:
        raise ParameterError(f"expected rows with {ensemble.n_features} features")
    if background.rows.shape[1] != ensemble.n_features:
        raise ParameterError("background width does not match the model")
    total = np.zeros((X.shape[0], ensemble.n_features))
    for tree in ensemble.trees:
        total += _tree_shap(tree, X, background.rows, ensemble.n_features)
    return ensemble.learning_rate * total


def shap_local(ensemble: Ensemble, x: np.ndarray, background: BackgroundSet) -> AttributionVector:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("shap_local expects a feature vector")
    values = shap_values(ensemble, x[np.newaxis, :], background)[0]
    return AttributionVector(values=values, kind=AttributionKind.LOCAL_SIGNED)


def shap_global(ensemble: Ensemble, eval_rows: np.ndarray, background: BackgroundSet) -> AttributionVector:
    """Mean absolute local SHAP over the evaluation rows."""
    eval_rows = np.asarray(eval_rows, dtype=np.float64)
    if eval_rows.ndim != 2 or eval_rows.shape[0] == 0:
        raise ParameterError("eval_rows must be a nonempty matrix")
    values = np.abs(shap_values(ensemble, eval_rows, background)).mean(axis=0)
    return AttributionVector(values=values, kind=AttributionKind.GLOBAL_MEAN_ABS)


def brute_force_shap(ensemble: Ensemble, x: np.ndarray, background: BackgroundSet) -> np.ndarray:
    """Interventional Shapley values by enumerating all 2^P coalitions."""
    x = np.asarray(x, dtype=np.float64)
    p = ensemble.n_features
    if p > BRUTE_FORCE_MAX_FEATURES:
        raise ParameterError(f"brute force limited to {BRUTE_FORCE_MAX_FEATURES} features, got {p}")
    Z = background.rows
    masks = np.arange(1 << p)
    present = ((masks[:, np.newaxis] >> np.arange(p)) & 1).astype(bool)
    hybrids = np.where(present[:, np.newaxis, :], x, Z[np.newaxis, :, :])
    utility = predict_batch(ensemble, hybrids.reshape(-1, p)).reshape(masks.size, Z.shape[0]).mean(axis=1)

    size = present.sum(axis=1)
    coef = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    phi = np.zeros(p)
    for i in range(p):
        without = masks[~present[:, i]]
        phi[i] = np.sum(coef[size[without]] * (utility[without | (1 << i)] - utility[without]))
    return phi


def permutation_importance(ensemble: Ensemble, dataset: Dataset, eval_rows: np.ndarray,
                           seed: int) -> AttributionVector:
    """MSE increase when each column of the evaluation rows is permuted once."""
    eval_rows = np.asarray(eval_rows, dtype=np.intp)
    if eval_rows.size < 10:
        raise ParameterError(f"permutation importance needs at least 10 rows, got {eval_rows.size}")
    X = dataset.features[eval_rows]
    y = dataset.target[eval_rows]
    baseline = np.mean((y - predict_batch(ensemble, X)) ** 2)
    rng = make_rng(seed, STREAM_PERMUTATION)
    values = np.zeros(dataset.n_features)
    for j in range(dataset.n_features):
        shuffled = X.copy()
        shuffled[:, j] = X[rng.permutation(X.shape[0]), j]
        values[j] = np.mean((y - predict_batch(ensemble, shuffled)) ** 2) - baseline
    return AttributionVector(values=np.maximum(values, 0.0), kind=AttributionKind.GLOBAL_MEAN_ABS)


def split_count_importance(ensemble: Ensemble) -> AttributionVector:
    """Split counts normalized to sum to one."""
    counts = split_counts(ensemble).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return AttributionVector(values=counts, kind=AttributionKind.GLOBAL_MEAN_ABS, flagged=True)
    return AttributionVector(values=counts / total, kind=AttributionKind.GLOBAL_MEAN_ABS)


def gain_importance(ensemble: Ensemble, dataset: Dataset) -> AttributionVector:
    """Total squared-error reduction per feature, replayed on ``dataset``."""
    X, y = dataset.features, dataset.target
    values = np.zeros(ensemble.n_features)
    prediction = np.full(X.shape[0], ensemble.base_score)
    for tree in ensemble.trees:
        residual = y - prediction
        for node in range(tree.n_nodes):
            f = int(tree.feature[node])
            if f < 0:
                continue
            rows = _rows_at(tree, node, X)
            goes_left = X[rows, f] <= tree.threshold[node]
            values[f] += _sse(residual[rows]) - _sse(residual[rows][goes_left]) - _sse(residual[rows][~goes_left])
        prediction = prediction + ensemble.learning_rate * tree.predict(X)
    return AttributionVector(values=np.maximum(values, 0.0), kind=AttributionKind.GLOBAL_MEAN_ABS)


def _sse(r: np.ndarray) -> float:
    return float(np.sum((r - r.mean()) ** 2)) if r.size else 0.0


def _rows_at(tree, target: int, X: np.ndarray) -> np.ndarray:
    # Walk from the root to ``target`` following parent links.
    parent = {}
    for node in range(tree.n_nodes):
        if tree.feature[node] >= 0:
            parent[int(tree.left[node])] = (node, True)
            parent[int(tree.right[node])] = (node, False)
    path = []
    node = target
    while node in parent:
        up, is_left = parent[node]
        path.append((up, is_left))
        node = up
    mask = np.ones(X.shape[0], dtype=bool)
    for up, is_left in path:
        goes_left = X[:, tree.feature[up]] <= tree.threshold[up]
        mask &= goes_left if is_left else ~goes_left
    return np.nonzero(mask)[0]


def _model_row(seed: int, train: Dataset, train_config: TrainConfig, method: AttributionMethod,
               eval_rows: np.ndarray, eval_data: Dataset, background: BackgroundSet,
               dgp: Optional[DgpConfig]) -> Tuple[Ensemble, np.ndarray, float, float]:
    data = sample_dataset(dgp.with_seed(seed)) if dgp is not None else train
    start = time.perf_counter()
    ensemble = fit(data, train_config.with_seed(seed))
    fitted = time.perf_counter()
    if method == AttributionMethod.SHAP:
        vector = shap_global(ensemble, eval_data.features[eval_rows], background)
    elif method == AttributionMethod.PERMUTATION:
        vector = permutation_importance(ensemble, eval_data, eval_rows, seed)
    else:
        vector = split_count_importance(ensemble)
    return ensemble, vector.values, fitted - start, time.perf_counter() - fitted


def train_and_attribute(dataset: Dataset, train_config: TrainConfig, M: int, seed_base: int,
                        method: Union[str, AttributionMethod] = AttributionMethod.SHAP, *,
                        background_size: int = 50, background_seed: int = 1009,
                        eval_size: int = 200, eval_seed: int = 2003, threads: int = 1,
                        dgp: Optional[DgpConfig] = None) -> Tuple[AttributionMatrix, List[Ensemble]]:
    """Train M models on seeds seed_base..seed_base+M-1 and attribute each.

    A seed-fixed held-out slice of ``dataset`` is the evaluation set and the
    background is drawn from the remaining rows; both are shared by every
    row of the matrix.  With ``dgp`` given, model i trains on a fresh draw
    of that process (seed seed_base+i) instead of the remaining rows.
    """
    if M < 1:
        raise ParameterError(f"M must be at least 1, got {M}")
    method = AttributionMethod(method)
    eval_size = min(eval_size, dataset.n_samples // 2)
    train, held_out = dataset.split(eval_size, eval_seed)
    background = sample_background(train, background_size, background_seed)
    eval_rows = np.arange(held_out.n_samples)

    seeds = [seed_base + i for i in range(M)]
    worker = partial(_model_row, train=train, train_config=train_config, method=method,
                     eval_rows=eval_rows, eval_data=held_out, background=background, dgp=dgp)
    results = ordered_map(worker, seeds, threads)

    ensembles = [r[0] for r in results]
    for _, _, fit_seconds, attr_seconds in results:
        metrics.record_models_trained(1, fit_seconds, method.value)
        metrics.record_attribution_time(attr_seconds, method.value)

    group_of = dataset.group_of
    first_movers = None
    if group_of is not None:
        first_movers = tuple(tuple(first_mover(e, group_of).values()) for e in ensembles)
    matrix = AttributionMatrix(
        values=np.vstack([r[1] for r in results]),
        seeds=tuple(seeds),
        method=method,
        names=dataset.names,
        eval_slice_seed=eval_seed,
        background_seed=background_seed,
        group_of=group_of,
        first_movers=first_movers,
    )
    logger.info("attribution_matrix_built", M=M, P=matrix.P, method=method.value,
                seed_base=seed_base, resampled_data=dgp is not None)
    return matrix, ensembles


def attribution_matrix(dataset: Dataset, train_config: TrainConfig, M: int, seed_base: int,
                       method: Union[str, AttributionMethod] = AttributionMethod.SHAP,
                       **kwargs) -> AttributionMatrix:
    return train_and_attribute(dataset, train_config, M, seed_base, method, **kwargs)[0]


def save_attribution_matrix(matrix: AttributionMatrix, path: Union[str, Path]) -> Path:
    """Write the CSV and its JSON sidecar; returns the sidecar path."""
    path = Path(path)
    frame = pd.DataFrame(matrix.values, columns=list(matrix.names))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    sidecar = AttributionSidecar(
        seeds=list(matrix.seeds),
        method=matrix.method.value,
        eval_slice_seed=matrix.eval_slice_seed,
        background_seed=matrix.background_seed,
        feature_names=list(matrix.names),
        group_of=None if matrix.group_of is None else list(matrix.group_of),
        first_movers=None if matrix.first_movers is None else [list(r) for r in matrix.first_movers],
    )
    sidecar_path = path.with_suffix(".json")
    sidecar_path.write_text(json.dumps(sidecar.model_dump(), indent=2), encoding="utf-8")
    return sidecar_path


def load_attribution_matrix(path: Union[str, Path]) -> AttributionMatrix:
    path = Path(path)
    frame = pd.read_csv(path, dtype=np.float64)
    sidecar = AttributionSidecar.model_validate(
        json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    )
    return AttributionMatrix(
        values=frame.to_numpy(),
        seeds=tuple(sidecar.seeds),
        method=AttributionMethod(sidecar.method),
        names=tuple(frame.columns),
        eval_slice_seed=sidecar.eval_slice_seed,
        background_seed=sidecar.background_seed,
        group_of=None if sidecar.group_of is None else tuple(sidecar.group_of),
        first_movers=None if sidecar.first_movers is None else tuple(tuple(r) for r in sidecar.first_movers),
    )
