"""Stability diagnostics and the closed-form quantities behind them.

Two kinds of functions live here: estimators that read attribution matrices
or fitted ensembles (correlation groups, flip rates, the Z-test, the
split-frequency screen) and analytic calculators (attribution ratio, split
gap, ensemble sizing, query bound, Fisher information, ranking distances).
Experiment runners take their theory values from here.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import special, stats

from dashlab.attribution import AttributionMatrix
from dashlab.boost import Ensemble, split_counts, tree_feature_sets
from dashlab.errors import DivergenceError, ParameterError
from dashlab.schemas import DiagnosticReport, DiagnosticSummary, PairDiagnosticDocument, ScreenDocument
from dashlab.synthdata import STREAM_RESAMPLE, make_rng

logger = structlog.get_logger()

Z_CRITICAL = 1.96
BERRY_ESSEEN_C0 = 0.4748

MatrixLike = Union[AttributionMatrix, np.ndarray]


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    DEGENERATE = "degenerate"


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [1] * size

    def find(self, u: int) -> int:
        if self.parent[u] != u:
            self.parent[u] = self.find(self.parent[u])
        return self.parent[u]

    def union(self, u: int, v: int):
        root_u, root_v = self.find(u), self.find(v)
        if root_u == root_v:
            return
        if self.rank[root_u] > self.rank[root_v]:
            self.parent[root_v] = root_u
        elif self.rank[root_u] < self.rank[root_v]:
            self.parent[root_u] = root_v
        else:
            self.parent[root_v] = root_u
            self.rank[root_u] += 1

    def components(self, members: Iterable[int]) -> List[List[int]]:
        """Components over ``members``, each sorted, ordered by smallest member."""
        clusters = {}
        for i in members:
            clusters.setdefault(self.find(i), []).append(i)
        return sorted((sorted(c) for c in clusters.values()), key=lambda c: c[0])


@dataclass
class CorrelationGroups:
    threshold: float
    groups: List[List[int]]
    singletons: List[int]
    flagged_zero_variance: List[int] = field(default_factory=list)

    def group_of(self, n_features: int) -> Tuple[Optional[int], ...]:
        labels: List[Optional[int]] = [None] * n_features
        for g, members in enumerate(self.groups):
            for j in members:
                labels[j] = g
        return tuple(labels)

    def within_pairs(self) -> List[Tuple[int, int]]:
        return [pair for members in self.groups for pair in combinations(members, 2)]

    def between_pairs(self) -> List[Tuple[int, int]]:
        pairs = []
        for a, b in combinations(range(len(self.groups)), 2):
            pairs.extend((min(j, k), max(j, k)) for j in self.groups[a] for k in self.groups[b])
        return sorted(pairs)


@dataclass
class PairDiagnostic:
    j: int
    k: int
    M: int
    mean_gap: float
    noise_sd: float
    z: float
    snr: float
    flip_empirical: float
    flip_predicted: float
    verdict: Verdict


@dataclass
class ScreenResult:
    j: int
    k: int
    p_hat_j: float
    p_hat_k: float
    t_eff: float
    z_split: float
    flagged: bool


@dataclass(frozen=True)
class AnalyticParams:
    """Bundle of the analytic inputs used by the calculators below."""
    rho: float = 0.0
    alpha: float = 1.0
    T: int = 100
    m: int = 2
    P: int = 2
    sigma: float = 1.0
    delta_gap: float = 1.0
    delta_risk: float = 0.05
    epsilon: float = 0.1
    gamma: float = 0.0

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ExactFlipModel:
    p_top: float
    tie_prob: float
    flip_no_ties: float
    flip_tiebroken: float


@dataclass(frozen=True)
class FimAnalysis:
    lambda_minus: float
    semi_axis: float
    cr_variance_scale: float


# ---------------------------------------------------------------------------
# Correlation groups
# ---------------------------------------------------------------------------

def correlate_groups(features: np.ndarray, threshold: float = 0.5) -> CorrelationGroups:
    """Connected components of the graph with edges |pearson| > threshold."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("correlate_groups needs a matrix with at least 2 rows")
    if not 0 < threshold <= 1:
        raise ParameterError(f"threshold must be in (0, 1], got {threshold}")
    p = X.shape[1]
    constant = np.ptp(X, axis=0) == 0
    flagged = [int(j) for j in np.nonzero(constant)[0]]
    live = [int(j) for j in np.nonzero(~constant)[0]]

    uf = UnionFind(p)
    if len(live) >= 2:
        corr = np.corrcoef(X[:, live], rowvar=False)
        for a, b in zip(*np.nonzero(np.triu(np.abs(corr) > threshold, k=1))):
            uf.union(live[a], live[b])
    components = uf.components(range(p))
    groups = [c for c in components if len(c) >= 2]
    singletons = [c[0] for c in components if len(c) == 1]
    if flagged:
        logger.warning("zero_variance_columns", columns=flagged)
    logger.debug("groups_detected", threshold=threshold, groups=groups)
    return CorrelationGroups(threshold=threshold, groups=groups, singletons=singletons,
                             flagged_zero_variance=flagged)


# ---------------------------------------------------------------------------
# Flip rates and the Z-test
# ---------------------------------------------------------------------------

def _values(attr: MatrixLike) -> np.ndarray:
    return np.asarray(getattr(attr, "values", attr), dtype=np.float64)


def _gaps(attr: MatrixLike, j: int, k: int) -> np.ndarray:
    values = _values(attr)
    return values[:, j] - values[:, k]


def empirical_flip_rate(attr: MatrixLike, j: int, k: int) -> float:
    """min(#(phi_j > phi_k), #(phi_k > phi_j)) / M; exact ties count in neither."""
    d = _gaps(attr, j, k)
    return min(int(np.sum(d > 0)), int(np.sum(d < 0))) / d.size


def pairwise_flip_rate(attr: MatrixLike, j: int, k: int) -> float:
    """Fraction of model pairs ordering (j, k) oppositely; may exceed 1/2."""
    d = _gaps(attr, j, k)
    if d.size < 2:
        raise ParameterError("pairwise flip rate needs at least 2 models")
    return int(np.sum(d > 0)) * int(np.sum(d < 0)) / math.comb(d.size, 2)


def z_test(attr: MatrixLike, j: int, k: int, z_threshold: float = Z_CRITICAL) -> PairDiagnostic:
    """Z = |mean(D)| sqrt(M) / sd(D) for D = phi_j - phi_k across models."""
    d = _gaps(attr, j, k)
    M = d.size
    if M < 2:
        raise ParameterError(f"z_test needs at least 2 models, got {M}")
    mean = float(d.mean())
    gap = abs(mean)
    sd = float(d.std(ddof=1))
    flip = empirical_flip_rate(attr, j, k)
    if sd == 0.0:
        if gap == 0.0:
            return PairDiagnostic(j, k, M, 0.0, 0.0, 0.0, 0.0, flip, 0.5, Verdict.DEGENERATE)
        return PairDiagnostic(j, k, M, gap, 0.0, math.inf, math.inf, flip, 0.0, Verdict.STABLE)
    snr = gap / sd
    z = snr * math.sqrt(M)
    verdict = Verdict.UNSTABLE if z < z_threshold else Verdict.STABLE
    return PairDiagnostic(j, k, M, gap, sd, z, snr, flip, normal_cdf(-snr), verdict)


def diagnose_pairs(attr: MatrixLike, pairs: Sequence[Tuple[int, int]],
                   z_threshold: float = Z_CRITICAL) -> List[PairDiagnostic]:
    return [z_test(attr, j, k, z_threshold) for j, k in pairs]


def all_pairs_z_test(attr: MatrixLike, z_threshold: float = Z_CRITICAL) -> List[PairDiagnostic]:
    P = _values(attr).shape[1]
    return diagnose_pairs(attr, list(combinations(range(P), 2)), z_threshold)


def diagnostic_summary(diagnostics: Sequence[PairDiagnostic]) -> dict:
    """Counts plus the Pearson correlation between Z and empirical flip rate."""
    n_unstable = sum(d.verdict == Verdict.UNSTABLE for d in diagnostics)
    finite = [(d.z, d.flip_empirical) for d in diagnostics if math.isfinite(d.z)]
    r = None
    if len(finite) >= 3:
        z, flip = np.array(finite).T
        if np.ptp(z) > 0 and np.ptp(flip) > 0:
            r = float(stats.pearsonr(z, flip)[0])
    return {"n_pairs": len(diagnostics), "n_unstable": n_unstable, "pearson_r_between_z_and_flip": r}


def diagnostic_report(groups: CorrelationGroups, screens: Sequence["ScreenResult"] = (),
                      diagnostics: Sequence[PairDiagnostic] = (), names: Sequence[str] = ()) -> DiagnosticReport:
    """Collect groups, screen results and Z-test diagnostics into one document."""
    def name(i: int) -> Optional[str]:
        return names[i] if i < len(names) else None

    screen_docs = []
    for s in screens:
        screen_docs.append(ScreenDocument(j=s.j, k=s.k, name_j=name(s.j), name_k=name(s.k), p_hat_j=s.p_hat_j,
                                          p_hat_k=s.p_hat_k, t_eff=s.t_eff, z_split=s.z_split, flagged=s.flagged))
    pair_docs = []
    for d in diagnostics:
        pair_docs.append(PairDiagnosticDocument(
            j=d.j, k=d.k, name_j=name(d.j), name_k=name(d.k), M=d.M, mean_gap=d.mean_gap, noise_sd=d.noise_sd,
            z=d.z, snr=d.snr, flip_empirical=d.flip_empirical, flip_predicted=d.flip_predicted,
            verdict=d.verdict.value,
        ))
    summary = diagnostic_summary(diagnostics)
    if not diagnostics:
        summary["n_pairs"] = len(screens)
        summary["n_unstable"] = sum(s.flagged for s in screens)
    return DiagnosticReport(groups=[list(g) for g in groups.groups],
                            flagged_zero_variance=list(groups.flagged_zero_variance),
                            screens=screen_docs, pairs=pair_docs, summary=DiagnosticSummary(**summary))


# ---------------------------------------------------------------------------
# Split-frequency screen
# ---------------------------------------------------------------------------

def effective_trees(T: int, eta: float, deterministic: bool) -> float:
    """(T - T0)(1 - eta)/(1 + eta) with T0 = ceil(1/eta) without subsampling, else T.

    Clamped to [1, T].
    """
    if not deterministic:
        return float(T)
    t0 = math.ceil(1.0 / eta)
    t_eff = (T - t0) * (1.0 - eta) / (1.0 + eta)
    return float(min(max(t_eff, 1.0), T))


def screen(ensemble: Ensemble, pair: Tuple[int, int], eta: Optional[float] = None,
           z_threshold: float = Z_CRITICAL) -> ScreenResult:
    """Compare per-tree use frequencies of two features from one model."""
    j, k = pair
    T = ensemble.n_trees
    if T < 10:
        raise ParameterError(f"screen needs at least 10 trees, got {T}")
    eta = ensemble.learning_rate if eta is None else eta
    used = tree_feature_sets(ensemble)
    p_j = sum(j in s for s in used) / T
    p_k = sum(k in s for s in used) / T
    t_eff = effective_trees(T, eta, ensemble.config.deterministic)
    variance = (p_j * (1 - p_j) + p_k * (1 - p_k)) / t_eff
    if p_j == p_k:
        z_split = 0.0
    elif variance == 0:
        z_split = math.inf
    else:
        z_split = abs(p_j - p_k) / math.sqrt(variance)
    return ScreenResult(j, k, p_j, p_k, t_eff, z_split, z_split < z_threshold)


def screen_power(p_j: float, p_k: float, t_eff: float, z_threshold: float = Z_CRITICAL) -> float:
    """Probability the screen clears a pair with true frequencies (p_j, p_k)."""
    variance = (p_j * (1 - p_j) + p_k * (1 - p_k)) / t_eff
    if variance == 0:
        return 1.0 if p_j != p_k else 0.0
    return normal_cdf(abs(p_j - p_k) / math.sqrt(variance) - z_threshold)


# ---------------------------------------------------------------------------
# Normal distribution and flip-rate laws
# ---------------------------------------------------------------------------

def normal_cdf(x: float) -> float:
    return float(special.ndtr(x))


def normal_quantile(p: float) -> float:
    if not 0 < p < 1:
        raise ParameterError(f"quantile requires p in (0, 1), got {p}")
    return float(special.ndtri(p))


def flip_from_snr(snr: float) -> float:
    if snr < 0:
        raise ParameterError(f"snr must be nonnegative, got {snr}")
    return normal_cdf(-snr)


def berry_esseen_bound(gamma: float, sigma: float) -> float:
    """Worst-case error of the Gaussian flip law: C0 * gamma / sigma^3."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return BERRY_ESSEEN_C0 * gamma / sigma ** 3


def gaussian_consensus_flip(M: int, delta: float, sigma: float) -> float:
    """Flip probability of an M-model mean: Phi(-delta sqrt(M) / sigma)."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return normal_cdf(-abs(delta) * math.sqrt(M) / sigma)


def hoeffding_stability(M: int, delta: float, sigma: float) -> float:
    """Lower bound 1 - exp(-M delta^2 / (2 sigma^2)) on consensus ordering stability."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return 1.0 - math.exp(-M * delta * delta / (2.0 * sigma * sigma))


# ---------------------------------------------------------------------------
# Sizing and lower bounds
# ---------------------------------------------------------------------------

def ensemble_size_coefficient(delta_risk: float = 0.05) -> float:
    """(Phi^-1(1 - delta))^2, the factor multiplying (sigma/delta)^2."""
    return normal_quantile(1.0 - delta_risk) ** 2


def min_ensemble_size(sigma: float, delta_gap: float, delta_risk: float) -> int:
    """Smallest M whose consensus orders the pair correctly with prob 1 - delta_risk."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if delta_gap == 0:
        raise DivergenceError("symmetric pair: no finite ensemble separates")
    if delta_gap < 0:
        raise ParameterError(f"delta_gap must be positive, got {delta_gap}")
    if not 0 < delta_risk < 0.5:
        raise ParameterError(f"delta_risk must be in (0, 0.5), got {delta_risk}")
    return max(1, math.ceil((sigma / delta_gap) ** 2 * ensemble_size_coefficient(delta_risk)))


def query_lower_bound(sigma: float, delta0: float) -> float:
    """Minimum model evaluations any procedure needs: sigma^2 / (8 delta0^2)."""
    if sigma <= 0 or delta0 <= 0:
        raise ParameterError("sigma and delta0 must be positive")
    return sigma * sigma / (8.0 * delta0 * delta0)


def z_test_sample_size(delta0: float, sigma: float, z_threshold: float = Z_CRITICAL,
                       power: float = 0.8) -> int:
    """Models the Z-test needs to clear a gap delta0 with the given power."""
    if sigma <= 0 or delta0 <= 0:
        raise ParameterError("sigma and delta0 must be positive")
    return math.ceil(((z_threshold + normal_quantile(power)) * sigma / delta0) ** 2)


def z_test_power(delta0: float, sigma: float, M: int, z_threshold: float = Z_CRITICAL) -> float:
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    return normal_cdf(abs(delta0) * math.sqrt(M) / sigma - z_threshold)


# ---------------------------------------------------------------------------
# First-mover theory
# ---------------------------------------------------------------------------

def _check_unit_rho(rho: float):
    if not 0 <= rho < 1:
        raise ParameterError(f"rho must be in [0, 1), got {rho}")


def theoretical_ratio(rho: float, alpha: float = 1.0) -> float:
    """First-mover to other attribution ratio 1 / (1 - alpha rho^2)."""
    _check_unit_rho(rho)
    if not 0 <= alpha <= 1:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    captured = alpha * rho * rho
    if captured >= 1:
        raise DivergenceError(f"alpha*rho^2 = {captured} >= 1, ratio diverges")
    return 1.0 / (1.0 - captured)


def axiom_split_counts(rho: float, T: int) -> Tuple[float, float]:
    """(first-mover, other) split counts T/(2-rho^2) and (1-rho^2)T/(2-rho^2)."""
    _check_unit_rho(rho)
    denom = 2.0 - rho * rho
    return T / denom, (1.0 - rho * rho) * T / denom


def split_gap(rho: float, T: int) -> float:
    """rho^2 T / (2 - rho^2); never below rho^2 T / 2."""
    _check_unit_rho(rho)
    return rho * rho * T / (2.0 - rho * rho)


def quantizer_fraction() -> float:
    """Share of a Gaussian signal's variance a single median split captures."""
    return 2.0 / math.pi


def fit_alpha(rhos: Sequence[float], ratios: Sequence[float]) -> float:
    """Least-squares alpha in 1 - 1/ratio = alpha rho^2, clipped to [0, 1]."""
    rho2 = np.asarray(rhos, dtype=np.float64) ** 2
    y = 1.0 - 1.0 / np.asarray(ratios, dtype=np.float64)
    keep = np.isfinite(y) & (rho2 > 0)
    if keep.sum() == 0:
        return 0.0
    alpha = float(np.sum(rho2[keep] * y[keep]) / np.sum(rho2[keep] ** 2))
    return min(max(alpha, 0.0), 1.0)


def exact_flip_model(m: int) -> ExactFlipModel:
    """Flip behaviour of two independent models whose first-mover is uniform on m."""
    if m < 2:
        raise ParameterError(f"m must be at least 2, got {m}")
    return ExactFlipModel(p_top=1.0 / m, tie_prob=(m - 2) / m, flip_no_ties=2.0 / (m * m),
                          flip_tiebroken=0.5)


# ---------------------------------------------------------------------------
# Ranking distances
# ---------------------------------------------------------------------------

def spearman_bound(P: int, m: int) -> float:
    """1 - 3 m^2 / (P^3 - P)."""
    if P < 2 or not 2 <= m <= P:
        raise ParameterError(f"need P >= 2 and 2 <= m <= P, got P={P}, m={m}")
    return 1.0 - 3.0 * m * m / (P ** 3 - P)


def _check_group_sizes(group_sizes: Sequence[int], P: Optional[int] = None):
    if not group_sizes or any(s < 1 for s in group_sizes):
        raise ParameterError(f"invalid group sizes {list(group_sizes)}")
    if P is not None and (P < 2 or sum(group_sizes) > P):
        raise ParameterError(f"group sizes {list(group_sizes)} do not fit P={P}")


def expected_kendall(group_sizes: Sequence[int], between_gaps: Union[float, Sequence[float]] = (),
                     between_sds: Union[float, Sequence[float]] = ()) -> float:
    """Expected discordant pairs between two independently trained models.

    Within-group pairs are coin flips; between groups l < l' contribute
    m_l m_l' Phi(-gap/sd).  Gaps and sds are given per group pair in
    ``itertools.combinations`` order, or as scalars shared by all pairs.
    """
    _check_group_sizes(group_sizes)
    within = sum(math.comb(m, 2) for m in group_sizes) / 2.0
    cross = list(combinations(range(len(group_sizes)), 2))
    if not cross:
        return within
    gaps = _broadcast(between_gaps, len(cross), "between_gaps")
    sds = _broadcast(between_sds, len(cross), "between_sds")
    if gaps is None:
        return within
    between = 0.0
    for (a, b), gap, sd in zip(cross, gaps, sds):
        if sd <= 0:
            raise ParameterError("between_sds must be positive")
        between += group_sizes[a] * group_sizes[b] * normal_cdf(-gap / sd)
    return within + between


def _broadcast(values, n: int, name: str) -> Optional[List[float]]:
    if np.isscalar(values):
        return [float(values)] * n
    values = list(values)
    if not values:
        return None
    if len(values) != n:
        raise ParameterError(f"{name} needs {n} entries, got {len(values)}")
    return [float(v) for v in values]


def rashomon_coefficient(group_sizes: Sequence[int], P: int) -> float:
    """Share of feature pairs that lie within a correlated group."""
    _check_group_sizes(group_sizes, P)
    return sum(math.comb(m, 2) for m in group_sizes) / math.comb(P, 2)


def non_replication_bound(group_sizes: Sequence[int], P: int) -> float:
    """Worst-case fraction of pairwise orderings that fail to replicate: R / 2."""
    return rashomon_coefficient(group_sizes, P) / 2.0


def spearman_fixed_vs_random(m: int, n_draws: int = 10000, seed: int = 0) -> float:
    """Monte Carlo mean Spearman correlation of a fixed ranking vs uniform permutations."""
    if m < 2:
        raise ParameterError(f"m must be at least 2, got {m}")
    rng = make_rng(seed, STREAM_RESAMPLE)
    fixed = np.arange(m)
    draws = [stats.spearmanr(fixed, rng.permutation(m))[0] for _ in range(n_draws)]
    return float(np.mean(draws))


# ---------------------------------------------------------------------------
# Fisher information and proportionality
# ---------------------------------------------------------------------------

def fim_analysis(rho: float, sigma: float, epsilon: float) -> FimAnalysis:
    """Small eigenvalue, Rashomon semi-axis and Cramer-Rao scale for a Gaussian pair."""
    if rho >= 1:
        raise DivergenceError("rho = 1: Fisher information is singular")
    _check_unit_rho(rho)
    if sigma <= 0 or epsilon <= 0:
        raise ParameterError("sigma and epsilon must be positive")
    return FimAnalysis(
        lambda_minus=(1.0 - rho) / sigma ** 2,
        semi_axis=sigma * math.sqrt(2.0 * epsilon / (1.0 - rho)),
        cr_variance_scale=2.0 * sigma ** 2 / (1.0 - rho),
    )


def proportionality_cv(ensemble: Ensemble, shap_global_vector) -> float:
    """Coefficient of variation of phi_j / n_j over features with n_j > 0."""
    phi = np.asarray(getattr(shap_global_vector, "values", shap_global_vector), dtype=np.float64)
    counts = split_counts(ensemble)
    used = counts > 0
    if used.sum() < 2:
        raise ParameterError("proportionality needs at least 2 features with splits")
    ratios = phi[used] / counts[used]
    mean = ratios.mean()
    if mean == 0:
        raise ParameterError("all attributions are zero")
    return float(ratios.std() / mean)


def analytic_summary(params: AnalyticParams) -> Dict[str, Optional[float]]:
    """Closed-form predictions for one parameter bundle.

    Quantities whose formula diverges (a symmetric pair has no finite
    ensemble size) or does not apply (no third moment, m > P) are None.
    """
    p = params
    lead, other = axiom_split_counts(p.rho, p.T)
    flips = exact_flip_model(p.m)
    fim = fim_analysis(p.rho, p.sigma, p.epsilon)
    try:
        ensemble_size: Optional[float] = float(min_ensemble_size(p.sigma, p.delta_gap, p.delta_risk))
    except DivergenceError:
        ensemble_size = None
    positive_gap = p.delta_gap > 0
    return {
        "ratio": theoretical_ratio(p.rho, p.alpha),
        "lead_splits": lead,
        "other_splits": other,
        "split_gap": split_gap(p.rho, p.T),
        "tie_prob": flips.tie_prob,
        "flip_no_ties": flips.flip_no_ties,
        "spearman_bound": spearman_bound(p.P, p.m) if 2 <= p.m <= p.P else None,
        "min_ensemble_size": ensemble_size,
        "z_test_sample_size": float(z_test_sample_size(p.delta_gap, p.sigma)) if positive_gap else None,
        "query_lower_bound": query_lower_bound(p.sigma, p.delta_gap) if positive_gap else None,
        "berry_esseen_bound": berry_esseen_bound(p.gamma, p.sigma) if p.gamma > 0 else None,
        "rashomon_semi_axis": fim.semi_axis,
    }


# ---------------------------------------------------------------------------
# Robust aggregation efficiency
# ---------------------------------------------------------------------------

def median_are() -> float:
    """Asymptotic efficiency of the median relative to the mean under normality."""
    return 2.0 / math.pi


def trimmed_mean_are(alpha: float) -> float:
    """Asymptotic efficiency of the alpha-per-tail trimmed mean under normality."""
    if not 0 <= alpha < 0.5:
        raise ParameterError(f"alpha must be in [0, 0.5), got {alpha}")
    if alpha == 0:
        return 1.0
    c = normal_quantile(1.0 - alpha)
    inner = (1.0 - 2.0 * alpha) - 2.0 * c * float(stats.norm.pdf(c))
    variance = (inner + 2.0 * alpha * c * c) / (1.0 - 2.0 * alpha) ** 2
    return 1.0 / variance
