"""DASH consensus attribution.

The consensus of an attribution matrix is its column-wise mean (or a robust
variant).  Features of one correlated group whose pairwise Z-test is
unstable are reported as a tied block instead of being ordered.
``progressive_dash`` sizes the ensemble adaptively: screen at 5 models,
confirm at 10, resolve borderline pairs at 25.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import special

from dashlab.attribution import AttributionMatrix, train_and_attribute
from dashlab.boost import TrainConfig
from dashlab.errors import ParameterError
from dashlab.stability import (Z_CRITICAL, CorrelationGroups, PairDiagnostic, ScreenResult,
                               UnionFind, Verdict, axiom_split_counts, correlate_groups,
                               screen, z_test)
from dashlab.synthdata import STREAM_RESAMPLE, Dataset, make_rng

logger = structlog.get_logger()


class ConsensusMethod(str, Enum):
    MEAN = "mean"
    TRIMMED = "trimmed"
    MEDIAN = "median"


class Stage(str, Enum):
    SCREEN = "screen@5"
    CONFIRM = "confirm@10"
    RESOLVE = "resolve@25"


@dataclass
class ConsensusResult:
    values: np.ndarray
    method: ConsensusMethod
    M: int
    balanced: bool
    first_mover_counts: np.ndarray
    tied_groups: List[List[int]] = field(default_factory=list)
    trim: float = 0.0
    names: Tuple[str, ...] = ()


@dataclass
class ProgressiveOutcome:
    stage_reached: Stage
    verdicts: Dict[Tuple[int, int], Verdict]
    total_models: int
    screens: List[ScreenResult] = field(default_factory=list)
    diagnostics: List[PairDiagnostic] = field(default_factory=list)
    consensus: Optional[ConsensusResult] = None


@dataclass(frozen=True)
class ProgressiveThresholds:
    screen_models: int = 5
    confirm_models: int = 10
    resolve_models: int = 25
    z_threshold: float = Z_CRITICAL
    borderline_low: float = 1.5
    borderline_high: float = 2.5


def _aggregate(values: np.ndarray, method: ConsensusMethod, trim: float) -> np.ndarray:
    # Sorting first makes every method exactly invariant to row order.
    ordered = np.sort(values, axis=0)
    M = ordered.shape[0]
    if method == ConsensusMethod.MEAN:
        return ordered.mean(axis=0)
    if method == ConsensusMethod.MEDIAN:
        return np.median(ordered, axis=0)
    if not 0 <= trim < 0.5:
        raise ParameterError(f"trim must be in [0, 0.5), got {trim}")
    cut = int(math.floor(trim * M))
    if M - 2 * cut < 1:
        raise ParameterError(f"trimming {cut} rows per tail leaves nothing of M={M}")
    return ordered[cut:M - cut].mean(axis=0)


def _tied_groups(attr: AttributionMatrix, groups: Sequence[Sequence[int]],
                 z_threshold: float) -> List[List[int]]:
    if attr.M < 2:
        return []
    uf = UnionFind(attr.P)
    members = set()
    for group in groups:
        for j, k in combinations(sorted(group), 2):
            if z_test(attr, j, k, z_threshold).verdict != Verdict.STABLE:
                uf.union(j, k)
                members.update((j, k))
    return [c for c in uf.components(sorted(members)) if len(c) >= 2]


def first_mover_counts(attr: AttributionMatrix) -> np.ndarray:
    counts = np.zeros(attr.P, dtype=np.int64)
    for row in attr.first_movers or ():
        for feature in row:
            if feature is not None:
                counts[feature] += 1
    return counts


def is_balanced(first_movers: Sequence[Optional[int]], group: Sequence[int]) -> bool:
    """True iff every feature of ``group`` is first-mover equally often."""
    counts = [sum(1 for f in first_movers if f == j) for j in group]
    return len(set(counts)) == 1


def consensus(attr: AttributionMatrix, method: Union[str, ConsensusMethod] = ConsensusMethod.MEAN,
              trim: float = 0.1,
              groups: Optional[Union[CorrelationGroups, Sequence[Sequence[int]]]] = None,
              z_threshold: float = Z_CRITICAL) -> ConsensusResult:
    """Column-wise DASH aggregate of an attribution matrix.

    ``groups`` (detected correlation groups) enables tie reporting; the
    matrix's own first-mover record, when present, drives the balance flag.
    """
    method = ConsensusMethod(method)
    values = _aggregate(attr.values, method, trim)
    if isinstance(groups, CorrelationGroups):
        groups = groups.groups
    groups = [list(g) for g in (groups or [])]
    tied = _tied_groups(attr, groups, z_threshold)

    counts = first_mover_counts(attr)
    balanced = False
    if attr.first_movers is not None and attr.group_of is not None:
        by_group: Dict[int, List[int]] = {}
        for j, g in enumerate(attr.group_of):
            if g is not None:
                by_group.setdefault(g, []).append(j)
        balanced = all(
            is_balanced([row[i] for row in attr.first_movers], by_group.get(g, []))
            for i, g in enumerate(sorted(by_group))
        )
    logger.debug("consensus_computed", method=method.value, M=attr.M, tied=tied)
    return ConsensusResult(values=values, method=method, M=attr.M, balanced=balanced,
                           first_mover_counts=counts, tied_groups=tied,
                           trim=trim if method == ConsensusMethod.TRIMMED else 0.0,
                           names=attr.names)


def consensus_ranking(result: ConsensusResult) -> List[List[int]]:
    """Features ordered by consensus value; each tied group forms one block."""
    block_of = {}
    for block in result.tied_groups:
        for j in block:
            block_of[j] = tuple(block)
    blocks, seen = [], set()
    for j in sorted(range(result.values.size), key=lambda i: (-result.values[i], i)):
        block = block_of.get(j, (j,))
        if block not in seen:
            seen.add(block)
            blocks.append(list(block))
    return blocks


def group_attribution(result: ConsensusResult, groups: Sequence[Sequence[int]]) -> List[Tuple[float, float]]:
    """(total consensus attribution, share of overall total) per group."""
    total = float(result.values.sum())
    out = []
    for group in groups:
        mass = float(result.values[list(group)].sum())
        out.append((mass, mass / total if total > 0 else 0.0))
    return out


def axiom_model_row(P: int, group: Sequence[int], first_mover: int, rho: float, T: int) -> np.ndarray:
    """Split counts of a model whose first-mover in ``group`` is ``first_mover``."""
    if first_mover not in group:
        raise ParameterError(f"first mover {first_mover} not in group {list(group)}")
    lead, other = axiom_split_counts(rho, T)
    row = np.zeros(P)
    row[list(group)] = other
    row[first_mover] = lead
    return row


def balanced_axiom_matrix(P: int, group: Sequence[int], rho: float, T: int) -> AttributionMatrix:
    """One axiom-model row per group feature as first-mover."""
    rows = [axiom_model_row(P, group, j, rho, T) for j in group]
    group_of = tuple(0 if j in group else None for j in range(P))
    return AttributionMatrix(values=np.vstack(rows), seeds=tuple(range(len(rows))),
                             group_of=group_of, first_movers=tuple((j,) for j in group))


def consensus_flip_rate(attr: AttributionMatrix, j: int, k: int, M_sub: int, n_resamples: int = 200,
                        seed: int = 0, tie_aware: bool = True, z_threshold: float = Z_CRITICAL,
                        retrain: Optional[Callable[[int, int], AttributionMatrix]] = None) -> float:
    """Flip rate of M_sub-model consensus orderings of (j, k).

    Subsets of rows are drawn without replacement; when no more than
    ``n_resamples`` subsets exist they are all enumerated.  With
    ``tie_aware`` a consensus whose own Z-test is not stable counts as a
    tie (neither order).  ``retrain(M_sub, seed)`` switches to full-retrain
    mode, producing a fresh matrix per resample.
    """
    if n_resamples < 50:
        raise ParameterError(f"n_resamples must be at least 50, got {n_resamples}")
    if M_sub < 1:
        raise ParameterError(f"M_sub must be positive, got {M_sub}")

    if retrain is not None:
        samples = (retrain(M_sub, seed + r) for r in range(n_resamples))
    else:
        if M_sub > attr.M:
            raise ParameterError(f"M_sub={M_sub} exceeds the {attr.M} available rows")
        if math.comb(attr.M, M_sub) <= n_resamples:
            subsets = [list(c) for c in combinations(range(attr.M), M_sub)]
        else:
            rng = make_rng(seed, STREAM_RESAMPLE)
            subsets = [np.sort(rng.choice(attr.M, size=M_sub, replace=False)) for _ in range(n_resamples)]
        samples = (attr.values[rows] for rows in subsets)

    positive = negative = total = 0
    for sample in samples:
        values = getattr(sample, "values", sample)
        total += 1
        d = values[:, j] - values[:, k]
        if tie_aware and d.size >= 2 and z_test(values, j, k, z_threshold).verdict != Verdict.STABLE:
            continue
        gap = d.mean()
        positive += gap > 0
        negative += gap < 0
    return min(positive, negative) / total


def confirm_verdict(z: float, thresholds: ProgressiveThresholds) -> Optional[Verdict]:
    """Verdict for a flagged pair at the confirm stage; None inside the open borderline band."""
    if thresholds.borderline_low < z < thresholds.borderline_high:
        return None
    return resolve_verdict(z, thresholds)


def resolve_verdict(z: float, thresholds: ProgressiveThresholds) -> Verdict:
    return Verdict.UNSTABLE if z < thresholds.z_threshold else Verdict.STABLE


def progressive_dash(dataset: Dataset, train_config: TrainConfig,
                     pairs_of_interest: Optional[Sequence[Tuple[int, int]]] = None, *,
                     thresholds: ProgressiveThresholds = ProgressiveThresholds(),
                     correlation_threshold: float = 0.5, seed_base: int = 0,
                     threads: int = 1, **attribution_kwargs) -> ProgressiveOutcome:
    """Screen, confirm, then resolve instability with growing ensembles.

    Without explicit pairs, all within-group pairs of the detected
    correlation groups are examined.
    """
    groups = correlate_groups(dataset.features, correlation_threshold)
    pairs = list(pairs_of_interest) if pairs_of_interest is not None else groups.within_pairs()
    if dataset.group_of is None:
        dataset = dataset.with_groups(groups.group_of(dataset.n_features))
    t = thresholds

    def train(M: int, start: int):
        return train_and_attribute(dataset, train_config, M, start, threads=threads, **attribution_kwargs)

    matrix, ensembles = train(t.screen_models, seed_base)
    screens = [screen(ensembles[0], pair, z_threshold=t.z_threshold) for pair in pairs]
    diagnostics = [z_test(matrix, j, k, t.z_threshold) for j, k in pairs]
    flagged = [pair for pair, s, d in zip(pairs, screens, diagnostics)
               if s.flagged or d.verdict != Verdict.STABLE]
    verdicts = {pair: Verdict.STABLE for pair in pairs}
    logger.info("progressive_screen", pairs=len(pairs), flagged=len(flagged))

    stage = Stage.SCREEN
    if flagged:
        extra, _ = train(t.confirm_models - t.screen_models, seed_base + t.screen_models)
        matrix = _stack(matrix, extra)
        stage = Stage.CONFIRM
        borderline = []
        for pair in flagged:
            verdict = confirm_verdict(z_test(matrix, *pair, t.z_threshold).z, t)
            if verdict is None:
                borderline.append(pair)
            else:
                verdicts[pair] = verdict
        if borderline:
            extra, _ = train(t.resolve_models - t.confirm_models, seed_base + t.confirm_models)
            matrix = _stack(matrix, extra)
            stage = Stage.RESOLVE
            for pair in borderline:
                verdicts[pair] = resolve_verdict(z_test(matrix, *pair, t.z_threshold).z, t)
        diagnostics = [z_test(matrix, j, k, t.z_threshold) for j, k in pairs]

    result = consensus(matrix, groups=groups, z_threshold=t.z_threshold)
    logger.info("progressive_finished", stage=stage.value, models=matrix.M,
                unstable=sum(v == Verdict.UNSTABLE for v in verdicts.values()))
    return ProgressiveOutcome(stage_reached=stage, verdicts=verdicts, total_models=matrix.M,
                              screens=screens, diagnostics=diagnostics, consensus=result)


def _stack(first: AttributionMatrix, second: AttributionMatrix) -> AttributionMatrix:
    movers = None
    if first.first_movers is not None and second.first_movers is not None:
        movers = first.first_movers + second.first_movers
    return AttributionMatrix(
        values=np.vstack([first.values, second.values]),
        seeds=first.seeds + second.seeds,
        method=first.method,
        names=first.names,
        eval_slice_seed=first.eval_slice_seed,
        background_seed=first.background_seed,
        group_of=first.group_of,
        first_movers=movers,
    )


# ---------------------------------------------------------------------------
# Information accounting
# ---------------------------------------------------------------------------

def binary_entropy(p: float) -> float:
    """H2(p) in bits, with H2(0) = H2(1) = 0."""
    return float((special.entr(p) + special.entr(1.0 - p)) / math.log(2.0))


def info_loss_within(m: int) -> float:
    """Bits of within-group ordering discarded by reporting a tie: log2(m!)."""
    if m < 1:
        raise ParameterError(f"m must be at least 1, got {m}")
    return float(special.gammaln(m + 1) / math.log(2.0))


def info_between(M: int, delta: float, sigma: float) -> float:
    """Bits about a between-group ordering retained by an M-model consensus."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    flip = float(special.ndtr(-abs(delta) * math.sqrt(M) / sigma))
    return 1.0 - binary_entropy(flip)


def information_change(L: int, m: int, M: int, delta: float, sigma: float) -> float:
    """Net bits: between-group gain over a single model minus within-group loss."""
    gain = math.comb(L, 2) * (info_between(M, delta, sigma) - info_between(1, delta, sigma))
    return gain - L * info_loss_within(m)
