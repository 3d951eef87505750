"""Synthetic collinear datasets and CSV dataset I/O.

Features are drawn from a block-diagonal Gaussian: each group is an
equicorrelated block sampled through its Cholesky factor, groups and extra
features are mutually independent.  All randomness goes through
``make_rng`` (Philox, counter based) so streams agree across platforms.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from dashlab.errors import DatasetParseError, ParameterError

logger = structlog.get_logger()

# Independent random sub-streams keyed alongside the seed.
STREAM_DATA = 0
STREAM_ROWS = 1
STREAM_COLUMNS = 2
STREAM_BACKGROUND = 3
STREAM_EVAL = 4
STREAM_PERMUTATION = 5
STREAM_RESAMPLE = 6


def make_rng(seed: int, stream: int = STREAM_DATA) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``."""
    if seed < 0:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class GroupSpec:
    """L groups of m equicorrelated features plus independent extras."""

    group_count: int
    group_size: int
    rho: float
    extras: int = 0

    def __post_init__(self):
        if self.group_count < 1:
            raise ParameterError(f"group_count must be positive, got {self.group_count}")
        if self.extras < 0:
            raise ParameterError(f"extras must be nonnegative, got {self.extras}")
        _check_rho(self.group_size, self.rho)

    @property
    def n_features(self) -> int:
        return self.group_count * self.group_size + self.extras

    def group_of(self) -> Tuple[Optional[int], ...]:
        grouped = [ell for ell in range(self.group_count) for _ in range(self.group_size)]
        return tuple(grouped) + (None,) * self.extras

    def feature_names(self) -> Tuple[str, ...]:
        names = [f"g{ell}_f{i}" for ell in range(self.group_count) for i in range(self.group_size)]
        return tuple(names) + tuple(f"z{i}" for i in range(self.extras))


@dataclass(frozen=True)
class DgpConfig:
    groups: GroupSpec
    betas: Tuple[float, ...]
    noise_sd: float = 1.0
    n_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(self.betas) != self.groups.n_features:
            raise ParameterError(
                f"betas has {len(self.betas)} entries, expected {self.groups.n_features}"
            )
        if self.noise_sd < 0:
            raise ParameterError(f"noise_sd must be nonnegative, got {self.noise_sd}")
        if self.n_samples < 2:
            raise ParameterError(f"n_samples must be at least 2, got {self.n_samples}")
        if self.seed < 0:
            raise ParameterError(f"seed must be nonnegative, got {self.seed}")

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=seed)


@dataclass(eq=False)
class Dataset:
    """Feature matrix with names, target and optional group metadata."""

    features: np.ndarray
    target: np.ndarray
    names: Tuple[str, ...]
    group_of: Optional[Tuple[Optional[int], ...]] = None
    target_name: str = "y"
    zero_variance: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.names = tuple(self.names)
        if self.features.ndim != 2:
            raise ParameterError("features must be a 2-D matrix")
        if self.features.shape[1] != len(self.names):
            raise ParameterError(
                f"{self.features.shape[1]} feature columns but {len(self.names)} names"
            )
        if self.target.shape != (self.features.shape[0],):
            raise ParameterError("target length must equal the number of rows")
        if self.group_of is not None and len(self.group_of) != len(self.names):
            raise ParameterError("group_of must have one entry per feature")
        if not self.zero_variance and self.n_samples > 0:
            constant = np.ptp(self.features, axis=0) == 0
            self.zero_variance = tuple(int(j) for j in np.nonzero(constant)[0])

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[rows],
            target=self.target[rows],
            names=self.names,
            group_of=self.group_of,
            target_name=self.target_name,
        )

    def with_groups(self, group_of: Sequence[Optional[int]]) -> "Dataset":
        """Same rows, labelled with feature groups (``None`` for ungrouped features)."""
        return Dataset(
            features=self.features,
            target=self.target,
            names=self.names,
            group_of=tuple(group_of),
            target_name=self.target_name,
            zero_variance=self.zero_variance,
        )

    def split(self, eval_size: int, seed: int) -> Tuple["Dataset", "Dataset"]:
        """Hold out ``eval_size`` seed-chosen rows; returns (train, eval)."""
        if not 1 <= eval_size < self.n_samples:
            raise ParameterError(f"eval_size must be in [1, {self.n_samples}), got {eval_size}")
        order = make_rng(seed, STREAM_EVAL).permutation(self.n_samples)
        held_out = np.sort(order[:eval_size])
        kept = np.sort(order[eval_size:])
        return self.subset(kept), self.subset(held_out)


def _check_rho(m: int, rho: float):
    if m < 1:
        raise ParameterError(f"group size must be at least 1, got {m}")
    if m == 1:
        return
    lower = -1.0 / (m - 1)
    if not lower < rho < 1.0:
        raise ParameterError(f"rho={rho} outside admissible range ({lower:.6g}, 1) for m={m}")


def equicorrelated_cov(m: int, rho: float) -> np.ndarray:
    """m x m matrix with unit diagonal and every off-diagonal entry ``rho``."""
    _check_rho(m, rho)
    if m == 1:
        return np.ones((1, 1))
    cov = np.full((m, m), float(rho))
    np.fill_diagonal(cov, 1.0)
    return cov


def default_betas(groups: GroupSpec, mode: str = "symmetric", base: float = 3.0,
                  spread: float = 0.0) -> Tuple[float, ...]:
    """Response weights for a GroupSpec.

    ``symmetric`` puts 1 on every group feature, ``graded`` puts ``base**l``
    on group l.  ``spread`` scales feature i of a group by ``1 + spread*i``.
    Extras always get 0.
    """
    if mode not in ("symmetric", "graded"):
        raise ParameterError(f"unknown beta mode {mode!r}")
    betas = []
    for ell in range(groups.group_count):
        level = 1.0 if mode == "symmetric" else float(base) ** ell
        betas.extend(level * (1.0 + spread * i) for i in range(groups.group_size))
    return tuple(betas) + (0.0,) * groups.extras


def asymmetric_pair_betas(delta_beta: float) -> Tuple[float, float, float]:
    """Weights for the known-causal-structure DGP Y = b1*X1 + b2*X2 + 0.5*X3."""
    if delta_beta < 0:
        raise ParameterError(f"delta_beta must be nonnegative, got {delta_beta}")
    return (1.0 + delta_beta / 2.0, 1.0 - delta_beta / 2.0, 0.5)


def sample_dataset(config: DgpConfig) -> Dataset:
    """Draw ``n_samples`` rows from the block-diagonal Gaussian DGP."""
    spec = config.groups
    try:
        factor = np.linalg.cholesky(equicorrelated_cov(spec.group_size, spec.rho))
    except np.linalg.LinAlgError as e:
        raise ParameterError(f"equicorrelation matrix not positive definite: {e}")

    rng = make_rng(config.seed, STREAM_DATA)
    n, p = config.n_samples, spec.n_features
    features = rng.standard_normal((n, p))
    m = spec.group_size
    for ell in range(spec.group_count):
        block = slice(ell * m, (ell + 1) * m)
        features[:, block] = features[:, block] @ factor.T
    noise = rng.standard_normal(n)
    target = features @ np.asarray(config.betas) + config.noise_sd * noise

    logger.debug("dataset_sampled", n=n, p=p, rho=spec.rho, seed=config.seed)
    return Dataset(
        features=features,
        target=target,
        names=spec.feature_names(),
        group_of=spec.group_of(),
    )


def load_csv(path: Union[str, Path], target_column: Union[str, int]) -> Dataset:
    """Load a headed numeric CSV; ``target_column`` is a name or zero-based index."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DatasetParseError(f"{path}: empty file", row=0)
    except pd.errors.ParserError as e:
        raise DatasetParseError(f"{path}: malformed CSV: {e}")

    columns = [str(c) for c in frame.columns]
    target_name = _resolve_target(columns, target_column, path)

    numeric = np.empty(frame.shape, dtype=np.float64)
    for c, name in enumerate(columns):
        raw = frame.iloc[:, c].str.strip()
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            i = int(np.argmax(bad))
            raise DatasetParseError(
                f"{path}: non-numeric or non-finite cell {frame.iloc[i, c]!r}", row=i + 1, column=name
            )
        numeric[:, c] = values

    target_index = columns.index(target_name)
    feature_index = [c for c in range(len(columns)) if c != target_index]
    if not feature_index:
        raise DatasetParseError(f"{path}: no feature columns besides target", column=target_name)

    dataset = Dataset(
        features=numeric[:, feature_index],
        target=numeric[:, target_index],
        names=tuple(columns[c] for c in feature_index),
        target_name=target_name,
    )
    if dataset.zero_variance:
        logger.warning("zero_variance_columns", path=str(path),
                       columns=[dataset.names[j] for j in dataset.zero_variance])
    logger.info("dataset_loaded", path=str(path), n=dataset.n_samples, p=dataset.n_features)
    return dataset


def _resolve_target(columns: Sequence[str], target_column: Union[str, int], path) -> str:
    if isinstance(target_column, str):
        if target_column in columns:
            return target_column
        if not target_column.lstrip("-").isdigit():
            raise DatasetParseError(f"{path}: missing target column", row=0, column=target_column)
        target_column = int(target_column)
    if not 0 <= target_column < len(columns):
        raise DatasetParseError(f"{path}: target index {target_column} out of range", row=0)
    return columns[target_column]


def save_csv(dataset: Dataset, path: Union[str, Path]):
    """Write features then target with round-trip float precision."""
    frame = pd.DataFrame(dataset.features, columns=list(dataset.names))
    frame[dataset.target_name] = dataset.target
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")
    logger.info("dataset_saved", path=str(path), n=dataset.n_samples, p=dataset.n_features)
