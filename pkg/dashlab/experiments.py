"""Canned experiment runners.

Every runner is a pure function of its arguments and an ExperimentConfig,
returns an ExperimentResult and never derives theory values inline; those
come from ``dashlab.stability`` and ``dashlab.dash``.  ``write_outputs``
persists a result as ``<out>/<name>/results.csv``, ``results.json`` and
``plot_data.csv``.
"""
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from dashlab import metrics
from dashlab.attribution import (AttributionMatrix, AttributionMethod, permutation_importance,
                                 sample_background, shap_global, train_and_attribute)
from dashlab.boost import TrainConfig, first_mover, fit, split_counts
from dashlab.dash import consensus_flip_rate, info_between, info_loss_within
from dashlab.errors import ParameterError
from dashlab.pool import ordered_map
from dashlab.schemas import ExperimentDocument
from dashlab.stability import (Z_CRITICAL, AnalyticParams, analytic_summary, axiom_split_counts,
                               correlate_groups, diagnose_pairs, diagnostic_report, diagnostic_summary,
                               empirical_flip_rate, exact_flip_model, fit_alpha, flip_from_snr,
                               proportionality_cv, quantizer_fraction, screen, split_gap, theoretical_ratio,
                               trimmed_mean_are, z_test)
from dashlab.synthdata import (STREAM_RESAMPLE, DgpConfig, GroupSpec, asymmetric_pair_betas, default_betas,
                               make_rng, sample_dataset)

logger = structlog.get_logger()

SNR_BINS = (0.0, 0.5, 1.0, 1.28, 1.96, 3.0, math.inf)

Seeds = Union[int, Sequence[int]]


@dataclass(frozen=True)
class ExperimentConfig:
    """Shared DGP, training and attribution settings for the runners."""
    group_count: int = 2
    group_size: int = 2
    extras: int = 0
    n_samples: int = 2000
    noise_sd: float = 1.0
    beta_mode: str = "graded"
    beta_base: float = 3.0
    beta_spread: float = 0.0
    rounds: int = 100
    max_depth: int = 1
    learning_rate: float = 0.1
    subsample: float = 0.8
    colsample: float = 1.0
    min_leaf: int = 1
    background_size: int = 50
    background_seed: int = 1009
    eval_size: int = 200
    eval_seed: int = 2003
    seed: int = 0
    resample_data: bool = True
    n_resamples: int = 200
    z_threshold: float = Z_CRITICAL
    threads: int = 1

    @classmethod
    def from_settings(cls, settings, **overrides) -> "ExperimentConfig":
        names = set(cls.__dataclass_fields__)
        values = {k: v for k, v in settings.model_dump().items() if k in names}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_(self, **overrides) -> "ExperimentConfig":
        return replace(self, **overrides)

    def train_config(self, **overrides) -> TrainConfig:
        values = dict(rounds=self.rounds, max_depth=self.max_depth, learning_rate=self.learning_rate,
                      subsample=self.subsample, colsample=self.colsample, min_leaf=self.min_leaf,
                      seed=self.seed)
        values.update(overrides)
        return TrainConfig(**values)

    def dgp(self, rho: float, betas: Optional[Sequence[float]] = None, spec: Optional[GroupSpec] = None) -> DgpConfig:
        spec = spec or GroupSpec(self.group_count, self.group_size, rho, self.extras)
        if betas is None:
            betas = default_betas(spec, self.beta_mode, self.beta_base, self.beta_spread)
        return DgpConfig(groups=spec, betas=tuple(betas), noise_sd=self.noise_sd,
                         n_samples=self.n_samples, seed=self.seed)

    def echo(self) -> Dict[str, Any]:
        return asdict(self)


_FIXED_PANEL = dict(group_count=4, group_size=5, beta_mode="graded", beta_base=1.5, beta_spread=0.05,
                    resample_data=False)

# Data shape and learner overrides each experiment applies on top of the shared settings.
EXPERIMENT_SHAPES: Dict[str, Dict[str, Any]] = {
    "ratio-sweep": dict(group_count=2, group_size=5, extras=0, beta_mode="symmetric", learning_rate=1.0),
    "axiom-validation": dict(group_count=1, group_size=2, extras=0, beta_mode="symmetric", learning_rate=1.0),
    "flip-sweep": dict(group_count=2, group_size=2, extras=0, beta_mode="graded"),
    "convergence": dict(group_count=2, group_size=2, extras=0, beta_mode="graded"),
    "conditional-sweep": dict(group_count=1, group_size=2, extras=1),
    "benchmark": dict(group_count=2, group_size=5, extras=0, n_samples=1000, beta_mode="symmetric",
                      max_depth=4, colsample=0.8, resample_data=False),
    "snr-calibration": _FIXED_PANEL,
    "diagnostic-correlation": _FIXED_PANEL,
    "permutation-comparison": {**_FIXED_PANEL, "group_count": 2},
    "proportionality": dict(group_count=2, group_size=5, extras=0, beta_mode="symmetric"),
    "determinism": {},
    "information-loss": {},
}


def default_config(name: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """``base`` (or the defaults) with the data shape experiment ``name`` needs."""
    return replace(base or ExperimentConfig(), **EXPERIMENT_SHAPES.get(name, {}))


@dataclass
class ExperimentResult:
    name: str
    rows: List[Dict[str, Any]]
    notes: List[str] = field(default_factory=list)
    extras: Dict[str, Any] = field(default_factory=dict)
    plot: List[Dict[str, Any]] = field(default_factory=list)
    timings: Dict[str, Any] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _seed_list(seeds: Seeds, start: int = 0) -> List[int]:
    if isinstance(seeds, int):
        if seeds < 1:
            raise ParameterError(f"need at least one seed, got {seeds}")
        return list(range(start, start + seeds))
    return [int(s) for s in seeds]


def _model_seeds(config: ExperimentConfig) -> int:
    # Model seeds start after the reference-data seed.
    return config.seed + 1


def _within_pairs(group_of: Sequence[Optional[int]]) -> List[Tuple[int, int]]:
    pairs = []
    for g in sorted({g for g in group_of if g is not None}):
        members = [j for j, h in enumerate(group_of) if h == g]
        pairs.extend(combinations(members, 2))
    return pairs


def _between_pairs(group_of: Sequence[Optional[int]]) -> List[Tuple[int, int]]:
    return [(j, k) for j, k in combinations(range(len(group_of)), 2)
            if group_of[j] is not None and group_of[k] is not None and group_of[j] != group_of[k]]


def _build_matrix(config: ExperimentConfig, dgp: DgpConfig, M: int,
                  method: AttributionMethod = AttributionMethod.SHAP, train_config: Optional[TrainConfig] = None):
    reference = sample_dataset(dgp)
    return train_and_attribute(
        reference, train_config or config.train_config(), M, _model_seeds(config), method,
        background_size=config.background_size, background_seed=config.background_seed,
        eval_size=config.eval_size, eval_seed=config.eval_seed, threads=config.threads,
        dgp=dgp if config.resample_data else None,
    )


def _mean_flip(matrix: AttributionMatrix, pairs: Sequence[Tuple[int, int]]) -> Tuple[float, float]:
    if not pairs:
        return 0.0, 0.0
    flips = [empirical_flip_rate(matrix, j, k) for j, k in pairs]
    return float(np.mean(flips)), float(np.max(flips))


def _timed(name: str, runner: Callable[[], ExperimentResult]) -> ExperimentResult:
    before = metrics.metrics.counters.get("models_trained_total", 0)
    start = time.perf_counter()
    with metrics.metrics.timed("experiment_seconds", labels={"experiment": name}):
        result = runner()
    elapsed = time.perf_counter() - start
    result.timings = {
        "seconds": elapsed,
        "models_trained": metrics.metrics.counters.get("models_trained_total", 0) - before,
    }
    logger.info("experiment_finished", experiment=name, rows=len(result.rows), seconds=round(elapsed, 3))
    return result


# ---------------------------------------------------------------------------
# Split-count ratio and axiom validation
# ---------------------------------------------------------------------------

def _group_movers(ensemble, group_of) -> Dict[int, Optional[int]]:
    movers = first_mover(ensemble, group_of)
    fallback = first_mover(ensemble, group_of, any_depth=True)
    return {g: movers[g] if movers[g] is not None else fallback[g] for g in movers}


def _ratio_task(task: Tuple[int, float, int], config: ExperimentConfig) -> Tuple[float, float]:
    depth, rho, seed = task
    dgp = config.dgp(rho).with_seed(seed)
    ensemble = fit(sample_dataset(dgp), config.train_config(max_depth=depth, seed=seed))
    counts = split_counts(ensemble)
    group_of = dgp.groups.group_of()
    lead, other = [], []
    for g, mover in _group_movers(ensemble, group_of).items():
        if mover is None:
            continue
        members = [j for j, h in enumerate(group_of) if h == g and j != mover]
        lead.append(counts[mover])
        other.append(np.mean(counts[members]))
    if not lead:
        return 0.0, 0.0
    return float(np.mean(lead)), float(np.mean(other))


def run_ratio_sweep(depths: Sequence[int], rhos: Sequence[float], seeds: Seeds = 30,
                    config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Within-group split-count ratio n_first / n_other per (depth, rho), plus fitted alpha."""
    if len(rhos) < 3:
        raise ParameterError(f"fitting alpha needs at least 3 rho values, got {len(rhos)}")
    config = config or default_config("ratio-sweep")
    seed_list = _seed_list(seeds, _model_seeds(config))

    def runner() -> ExperimentResult:
        tasks = [(d, r, s) for d in depths for r in rhos for s in seed_list]
        results = ordered_map(partial(_ratio_task, config=config), tasks, config.threads)
        rows, plot, fitted = [], [], {}
        n = len(seed_list)
        for di, depth in enumerate(depths):
            cells = []
            for ri, rho in enumerate(rhos):
                chunk = results[(di * len(rhos) + ri) * n:(di * len(rhos) + ri + 1) * n]
                lead = float(np.mean([c[0] for c in chunk]))
                other = float(np.mean([c[1] for c in chunk]))
                ratio = lead / other if other > 0 else math.inf
                cells.append((rho, lead, other, ratio))
            alpha = fit_alpha([c[0] for c in cells], [c[3] for c in cells])
            fitted[int(depth)] = alpha
            for rho, lead, other, ratio in cells:
                rows.append({
                    "experiment": "ratio-sweep", "depth": int(depth), "rho": rho,
                    "T": config.rounds, "eta": config.learning_rate, "m": config.group_size,
                    "L": config.group_count, "seed_first": seed_list[0], "seed_last": seed_list[-1],
                    "lead_splits": lead, "other_splits": other, "ratio": ratio,
                    "theory_alpha1": theoretical_ratio(rho, 1.0),
                    "theory_fitted": theoretical_ratio(rho, alpha), "fitted_alpha": alpha,
                })
                plot.append({"x": rho, "y": ratio, "series": f"depth {depth}"})
        for rho in rhos:
            plot.append({"x": rho, "y": theoretical_ratio(rho, 1.0), "series": "theory alpha=1"})
        return ExperimentResult("ratio-sweep", rows, extras={"fitted_alpha": fitted, "config": config.echo()},
                                plot=plot)

    return _timed("ratio-sweep", runner)


def _axiom_task(seed: int, rho: float, T: int, config: ExperimentConfig) -> Dict[str, Any]:
    dgp = config.dgp(rho).with_seed(seed)
    ensemble = fit(sample_dataset(dgp), config.train_config(rounds=T, max_depth=1, seed=seed))
    counts = split_counts(ensemble)
    mover = first_mover(ensemble, dgp.groups.group_of())[0]
    if mover is None:
        return {"seed": seed, "first_mover": None, "n_first": 0, "n_other": 0.0}
    others = [j for j in range(config.group_size) if j != mover]
    return {"seed": seed, "first_mover": int(mover), "n_first": int(counts[mover]),
            "n_other": float(np.mean(counts[others]))}


def run_axiom_validation(rho: float, T: int = 100, seeds: Seeds = 30,
                         config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Empirical first-mover and other split counts against the axiom model."""
    config = config or default_config("axiom-validation")
    seed_list = _seed_list(seeds, _model_seeds(config))
    theory_first, theory_other = axiom_split_counts(rho, T)
    theory_gap = split_gap(rho, T)

    def runner() -> ExperimentResult:
        records = ordered_map(partial(_axiom_task, rho=rho, T=T, config=config), seed_list, config.threads)
        rows = []
        for rec in records:
            rows.append({
                "experiment": "axiom-validation", "rho": rho, "T": T, "eta": config.learning_rate,
                "m": config.group_size, **rec, "gap": rec["n_first"] - rec["n_other"],
                "theory_first": theory_first, "theory_other": theory_other, "theory_gap": theory_gap,
            })
        n_first = float(np.mean([r["n_first"] for r in rows]))
        n_other = float(np.mean([r["n_other"] for r in rows]))
        extras = {
            "mean_first": n_first, "mean_other": n_other,
            "ratio": n_first / n_other if n_other > 0 else math.inf,
            "mean_gap": n_first - n_other,
            "gap_nonneg_fraction": float(np.mean([r["gap"] >= 0 for r in rows])),
            "theory_ratio": theory_first / theory_other if theory_other > 0 else math.inf,
            "analytic": analytic_summary(AnalyticParams(
                rho=rho, T=T, m=config.group_size,
                P=config.group_count * config.group_size + config.extras)),
        }
        plot = [{"x": r["seed"], "y": r["gap"], "series": "gap"} for r in rows]
        return ExperimentResult("axiom-validation", rows, extras=extras, plot=plot)

    return _timed("axiom-validation", runner)


# ---------------------------------------------------------------------------
# Flip rates and DASH convergence
# ---------------------------------------------------------------------------

def run_flip_sweep(rhos: Sequence[float], M: int = 50,
                   config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Within- and between-group flip rates per rho over M seeds."""
    config = config or default_config("flip-sweep")

    def runner() -> ExperimentResult:
        rows, plot = [], []
        for rho in rhos:
            dgp = config.dgp(rho)
            matrix, _ = _build_matrix(config, dgp, M)
            group_of = dgp.groups.group_of()
            within, within_max = _mean_flip(matrix, _within_pairs(group_of))
            between, between_max = _mean_flip(matrix, _between_pairs(group_of))
            rows.append({
                "experiment": "flip-sweep", "rho": rho, "M": M, "m": config.group_size,
                "L": config.group_count, "T": config.rounds, "eta": config.learning_rate,
                "depth": config.max_depth, "seed_first": matrix.seeds[0], "seed_last": matrix.seeds[-1],
                "within_flip": within, "within_flip_max": within_max,
                "between_flip": between, "between_flip_max": between_max,
                "theory_within": exact_flip_model(max(config.group_size, 2)).flip_tiebroken,
            })
            plot.append({"x": rho, "y": within, "series": "within-group"})
            plot.append({"x": rho, "y": between, "series": "between-group"})
        return ExperimentResult("flip-sweep", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("flip-sweep", runner)


def _within_group_cv(values: np.ndarray, group_of: Sequence[Optional[int]]) -> float:
    cvs = []
    for g in sorted({g for g in group_of if g is not None}):
        members = [j for j, h in enumerate(group_of) if h == g]
        group_values = values[members]
        if group_values.mean() > 0:
            cvs.append(group_values.std() / group_values.mean())
    return float(np.mean(cvs)) if cvs else 0.0


def run_convergence(rho: float, Ms: Sequence[int], config: Optional[ExperimentConfig] = None,
                    pool_size: Optional[int] = None) -> ExperimentResult:
    """Consensus flip rate and within-group CV as the ensemble grows."""
    config = config or default_config("convergence")
    pool_size = pool_size or max(50, 2 * max(Ms))

    def runner() -> ExperimentResult:
        dgp = config.dgp(rho)
        matrix, _ = _build_matrix(config, dgp, pool_size)
        group_of = dgp.groups.group_of()
        pairs = _within_pairs(group_of)
        single, _ = _mean_flip(matrix, pairs)
        rows, plot = [], []
        for M in Ms:
            flips = [consensus_flip_rate(matrix, j, k, M, config.n_resamples, seed=config.seed,
                                         z_threshold=config.z_threshold) for j, k in pairs]
            rng = make_rng(config.seed, STREAM_RESAMPLE)
            subset_means = [matrix.values[rng.choice(pool_size, size=M, replace=False)].mean(axis=0)
                            for _ in range(config.n_resamples)]
            cv = float(np.mean([_within_group_cv(v, group_of) for v in subset_means]))
            consensus_flip = float(np.mean(flips)) if flips else 0.0
            rows.append({
                "experiment": "convergence", "rho": rho, "M": M, "pool": pool_size,
                "m": config.group_size, "T": config.rounds, "eta": config.learning_rate,
                "consensus_flip": consensus_flip, "single_model_flip": single, "within_group_cv": cv,
            })
            plot.append({"x": M, "y": consensus_flip, "series": "consensus flip"})
            plot.append({"x": M, "y": cv, "series": "within-group CV"})
        return ExperimentResult("convergence", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("convergence", runner)


def run_benchmark(rhos: Sequence[float], M_dash: int = 25,
                  config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Single-model against DASH(M_dash) within-group flip rates per rho."""
    config = config or default_config("benchmark")
    pool_size = max(50, 2 * M_dash)

    def runner() -> ExperimentResult:
        rows, plot = [], []
        for rho in rhos:
            dgp = config.dgp(rho)
            matrix, _ = _build_matrix(config, dgp, pool_size)
            pairs = _within_pairs(dgp.groups.group_of())
            single, _ = _mean_flip(matrix, pairs)
            dash = float(np.mean([consensus_flip_rate(matrix, j, k, M_dash, config.n_resamples,
                                                      seed=config.seed, z_threshold=config.z_threshold)
                                  for j, k in pairs])) if pairs else 0.0
            rows.append({
                "experiment": "benchmark", "rho": rho, "M_dash": M_dash, "pool": pool_size,
                "m": config.group_size, "L": config.group_count, "n": config.n_samples,
                "single_model_flip": single, "dash_flip": dash,
                "reduction": single / dash if dash > 0 else math.inf,
            })
            plot.append({"x": rho, "y": single, "series": "single model"})
            plot.append({"x": rho, "y": dash, "series": f"DASH M={M_dash}"})
        return ExperimentResult("benchmark", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("benchmark", runner)


# ---------------------------------------------------------------------------
# Causal asymmetry and SNR calibration
# ---------------------------------------------------------------------------

CONDITIONAL_DISCREPANCY_NOTE = (
    "Reference results disagree on the cell rho=0.90, delta_beta=0.2 "
    "(48% flip in the coarse grid, 0.000 in the fine sweep); the measured value is reported as is."
)


def run_conditional_sweep(rhos: Sequence[float], delta_betas: Sequence[float], M: int = 50,
                          config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Flip rate of (X1, X2) for Y = b1 X1 + b2 X2 + 0.5 X3 with b1 - b2 = delta_beta."""
    config = config or default_config("conditional-sweep")

    def runner() -> ExperimentResult:
        rows, plot = [], []
        for rho in rhos:
            spec = GroupSpec(1, 2, rho, extras=1)
            for delta_beta in delta_betas:
                betas = asymmetric_pair_betas(delta_beta)
                matrix, _ = _build_matrix(config, config.dgp(rho, betas, spec), M)
                diag = z_test(matrix, 0, 1, config.z_threshold)
                rows.append({
                    "experiment": "conditional-sweep", "rho": rho, "delta_beta": delta_beta, "M": M,
                    "beta_j": betas[0], "beta_k": betas[1], "flip": diag.flip_empirical,
                    "z": diag.z, "snr": diag.snr, "flip_predicted": diag.flip_predicted,
                    "verdict": diag.verdict.value,
                })
                plot.append({"x": delta_beta, "y": diag.flip_empirical, "series": f"rho {rho}"})
        notes = []
        if any(math.isclose(r, 0.9) for r in rhos) and any(math.isclose(d, 0.2) for d in delta_betas):
            notes.append(CONDITIONAL_DISCREPANCY_NOTE)
            logger.warning("reference_results_disagree", rho=0.9, delta_beta=0.2)
        return ExperimentResult("conditional-sweep", rows, notes=notes, extras={"config": config.echo()},
                                plot=plot)

    return _timed("conditional-sweep", runner)


def run_snr_calibration(config: Optional[ExperimentConfig] = None, rho: float = 0.9,
                        M: int = 50) -> ExperimentResult:
    """Empirical flip rate against Phi(-SNR), binned by estimated SNR, over all pairs."""
    config = config or default_config("snr-calibration")

    def runner() -> ExperimentResult:
        matrix, _ = _build_matrix(config, config.dgp(rho), M)
        diagnostics = diagnose_pairs(matrix, list(combinations(range(matrix.P), 2)), config.z_threshold)
        rows, plot = [], []
        for lo, hi in zip(SNR_BINS[:-1], SNR_BINS[1:]):
            members = [d for d in diagnostics if lo <= d.snr < hi]
            empirical = float(np.mean([d.flip_empirical for d in members])) if members else None
            theory = float(np.mean([flip_from_snr(d.snr) for d in members])) if members else None
            rows.append({
                "experiment": "snr-calibration", "rho": rho, "M": M, "bin_lo": lo, "bin_hi": hi,
                "n_pairs": len(members), "empirical_flip": empirical, "theory_flip": theory,
            })
            if members:
                plot.append({"x": lo, "y": empirical, "series": "empirical"})
                plot.append({"x": lo, "y": theory, "series": "Phi(-SNR)"})
        return ExperimentResult("snr-calibration", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("snr-calibration", runner)


def run_diagnostic_correlation(rho: float = 0.9, M: int = 30,
                               config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Pearson r between Z and empirical flip over all within-group pairs."""
    config = config or default_config("diagnostic-correlation")

    def runner() -> ExperimentResult:
        dgp = config.dgp(rho)
        matrix, _ = _build_matrix(config, dgp, M)
        diagnostics = diagnose_pairs(matrix, _within_pairs(dgp.groups.group_of()), config.z_threshold)
        rows = [{"experiment": "diagnostic-correlation", "rho": rho, "M": M, "j": d.j, "k": d.k,
                 "z": d.z, "flip": d.flip_empirical, "verdict": d.verdict.value} for d in diagnostics]
        summary = diagnostic_summary(diagnostics)
        plot = [{"x": d.z, "y": d.flip_empirical, "series": "pairs"} for d in diagnostics]
        return ExperimentResult("diagnostic-correlation", rows, extras=summary, plot=plot)

    return _timed("diagnostic-correlation", runner)


# ---------------------------------------------------------------------------
# Attribution method comparison, proportionality, determinism
# ---------------------------------------------------------------------------

def run_permutation_comparison(rho: float = 0.9, M: int = 30,
                               config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Stability of SHAP against permutation importance on the same models."""
    config = config or default_config("permutation-comparison")

    def runner() -> ExperimentResult:
        dgp = config.dgp(rho)
        reference = sample_dataset(dgp)
        shap_matrix, ensembles = _build_matrix(config, dgp, M)
        eval_size = min(config.eval_size, reference.n_samples // 2)
        _, held_out = reference.split(eval_size, config.eval_seed)
        eval_rows = np.arange(held_out.n_samples)
        perm_values = np.vstack([permutation_importance(e, held_out, eval_rows, e.seed).values
                                 for e in ensembles])
        perm_matrix = AttributionMatrix(values=perm_values, seeds=shap_matrix.seeds,
                                        method=AttributionMethod.PERMUTATION, names=shap_matrix.names)
        pairs = _within_pairs(dgp.groups.group_of())
        rows = []
        for name, matrix in (("shap", shap_matrix), ("permutation", perm_matrix)):
            diagnostics = diagnose_pairs(matrix, pairs, config.z_threshold)
            summary = diagnostic_summary(diagnostics)
            rows.append({
                "experiment": "permutation-comparison", "method": name, "rho": rho, "M": M,
                "n_pairs": summary["n_pairs"], "n_unstable": summary["n_unstable"],
                "max_flip": max((d.flip_empirical for d in diagnostics), default=0.0),
                "mean_flip": float(np.mean([d.flip_empirical for d in diagnostics])) if diagnostics else 0.0,
                "pearson_r": summary["pearson_r_between_z_and_flip"],
            })
        plot = [{"x": r["method"], "y": r["mean_flip"], "series": "mean within-group flip"} for r in rows]
        return ExperimentResult("permutation-comparison", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("permutation-comparison", runner)


def _proportionality_task(task: Tuple[int, int], rho: float, config: ExperimentConfig) -> float:
    depth, seed = task
    dataset = sample_dataset(config.dgp(rho).with_seed(seed))
    train, held_out = dataset.split(min(config.eval_size, dataset.n_samples // 2), config.eval_seed)
    ensemble = fit(train, config.train_config(max_depth=depth, seed=seed))
    background = sample_background(train, config.background_size, config.background_seed)
    return proportionality_cv(ensemble, shap_global(ensemble, held_out.features, background))


def run_proportionality(depths: Sequence[int], rho: float = 0.5, seeds: Seeds = 10,
                        config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Coefficient of variation of phi_j / n_j by tree depth."""
    config = config or default_config("proportionality")
    seed_list = _seed_list(seeds, _model_seeds(config))

    def runner() -> ExperimentResult:
        tasks = [(d, s) for d in depths for s in seed_list]
        cvs = ordered_map(partial(_proportionality_task, rho=rho, config=config), tasks, config.threads)
        rows, plot = [], []
        n = len(seed_list)
        for i, depth in enumerate(depths):
            chunk = cvs[i * n:(i + 1) * n]
            rows.append({"experiment": "proportionality", "depth": int(depth), "rho": rho,
                         "seeds": n, "cv_mean": float(np.mean(chunk)), "cv_sd": float(np.std(chunk))})
            plot.append({"x": int(depth), "y": float(np.mean(chunk)), "series": "CV"})
        return ExperimentResult("proportionality", rows, extras={"config": config.echo()}, plot=plot)

    return _timed("proportionality", runner)


def run_information_loss(ms: Sequence[int] = (2, 3, 4, 5, 6, 7, 8), Ms: Sequence[int] = (1, 5, 10, 25, 50),
                         snr: float = 1.0, trims: Sequence[float] = (0.0, 0.05, 0.1, 0.25)) -> ExperimentResult:
    """Bits lost within groups, bits kept between groups, and robust-aggregator efficiency."""
    def runner() -> ExperimentResult:
        rows, plot = [], []
        for m in ms:
            rows.append({"experiment": "information-loss", "kind": "within", "m": m, "bits": info_loss_within(m)})
            plot.append({"x": m, "y": info_loss_within(m), "series": "bits lost within"})
        for M in Ms:
            bits = info_between(M, snr, 1.0)
            rows.append({"experiment": "information-loss", "kind": "between", "M": M, "snr": snr, "bits": bits})
            plot.append({"x": M, "y": bits, "series": "bits kept between"})
        for trim in trims:
            rows.append({"experiment": "information-loss", "kind": "trimmed-are", "trim": trim,
                         "bits": None, "are": trimmed_mean_are(trim)})
        return ExperimentResult("information-loss", rows, plot=plot,
                                extras={"median_split_variance_share": quantizer_fraction()})

    return _timed("information-loss", runner)


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def run_determinism(seeds: Seeds = 5, rho: float = 0.9,
                    config: Optional[ExperimentConfig] = None) -> ExperimentResult:
    """Without subsampling, models, attributions and reports must not depend on the seed."""
    config = (config or ExperimentConfig()).with_(subsample=1.0, colsample=1.0, resample_data=False)
    seed_list = _seed_list(seeds, _model_seeds(config))

    def runner() -> ExperimentResult:
        dgp = config.dgp(rho)
        dataset = sample_dataset(dgp)
        train, held_out = dataset.split(min(config.eval_size, dataset.n_samples // 2), config.eval_seed)
        background = sample_background(train, config.background_size, config.background_seed)
        groups = correlate_groups(train.features)
        pairs = _within_pairs(dgp.groups.group_of())
        rows = []
        for seed in seed_list:
            ensemble = fit(train, config.train_config(seed=seed))
            values = shap_global(ensemble, held_out.features, background).values
            attribution_csv = pd.DataFrame([values], columns=list(dataset.names)).to_csv(
                index=False, float_format="%.17g", lineterminator="\n")
            screens = [screen(ensemble, pair) for pair in pairs]
            report = diagnostic_report(groups, screens, names=dataset.names)
            rows.append({
                "experiment": "determinism", "seed": seed, "rho": rho,
                "model_sha256": _sha256(ensemble.to_json(include_seed=False)),
                "attribution_sha256": _sha256(attribution_csv),
                "report_sha256": _sha256(json.dumps(report.model_dump(), sort_keys=True)),
            })
        identical = all(
            len({r[key] for r in rows}) == 1 for key in ("model_sha256", "attribution_sha256", "report_sha256")
        )
        plot = [{"x": r["seed"], "y": int(r["model_sha256"] == rows[0]["model_sha256"]), "series": "matches"}
                for r in rows]
        return ExperimentResult("determinism", rows, extras={"identical": identical}, plot=plot)

    return _timed("determinism", runner)


# ---------------------------------------------------------------------------
# Registry and persistence
# ---------------------------------------------------------------------------

def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def write_outputs(result: ExperimentResult, out_dir: Union[str, Path]) -> Path:
    """Write results.csv, results.json and plot_data.csv under out_dir/name."""
    target = Path(out_dir) / result.name
    target.mkdir(parents=True, exist_ok=True)
    (target / "results.csv").write_text(_csv(result.frame()), encoding="utf-8")
    (target / "plot_data.csv").write_text(
        _csv(pd.DataFrame(result.plot, columns=["x", "y", "series"])), encoding="utf-8")
    doc = ExperimentDocument(experiment=result.name, rows=result.rows, notes=result.notes,
                             extras=result.extras, timings={**result.timings, **metrics.get_metrics()})
    (target / "results.json").write_text(json.dumps(doc.model_dump(), indent=2, default=str), encoding="utf-8")
    logger.info("experiment_written", experiment=result.name, path=str(target))
    return target


def _opt(options: Dict[str, Any], key: str, default: Any) -> Any:
    """``options[key]`` unless it is missing or None; zero is a real value."""
    value = options.get(key)
    return default if value is None else value


def _floats(values) -> List[float]:
    return [float(v) for v in values]


def _ints(values) -> List[int]:
    return [int(v) for v in values]


EXPERIMENTS: Dict[str, Callable[[Dict[str, Any], ExperimentConfig], ExperimentResult]] = {
    "ratio-sweep": lambda o, c: run_ratio_sweep(
        _ints(_opt(o, "depths", [1, 3, 6])), _floats(_opt(o, "rhos", [0.3, 0.5, 0.7, 0.9, 0.95])),
        _opt(o, "seeds", 30), c),
    "flip-sweep": lambda o, c: run_flip_sweep(
        _floats(_opt(o, "rhos", [0.1, 0.3, 0.5, 0.7, 0.9, 0.95])), _opt(o, "M", 50), c),
    "convergence": lambda o, c: run_convergence(
        float(_opt(o, "rho", 0.9)), _ints(_opt(o, "Ms", [1, 5, 10, 25])), c),
    "conditional-sweep": lambda o, c: run_conditional_sweep(
        _floats(_opt(o, "rhos", [0.5, 0.7, 0.9, 0.99])), _floats(_opt(o, "delta_betas", [0.0, 0.2, 0.5, 1.0])),
        _opt(o, "M", 50), c),
    "snr-calibration": lambda o, c: run_snr_calibration(c, float(_opt(o, "rho", 0.9)), _opt(o, "M", 50)),
    "axiom-validation": lambda o, c: run_axiom_validation(
        float(_opt(o, "rho", 0.5)), c.rounds, _opt(o, "seeds", 30), c),
    "benchmark": lambda o, c: run_benchmark(_floats(_opt(o, "rhos", [0.5, 0.7, 0.9])), _opt(o, "M", 25), c),
    "determinism": lambda o, c: run_determinism(_opt(o, "seeds", 5), float(_opt(o, "rho", 0.9)), c),
    "permutation-comparison": lambda o, c: run_permutation_comparison(
        float(_opt(o, "rho", 0.9)), _opt(o, "M", 30), c),
    "diagnostic-correlation": lambda o, c: run_diagnostic_correlation(
        float(_opt(o, "rho", 0.9)), _opt(o, "M", 30), c),
    "proportionality": lambda o, c: run_proportionality(
        _ints(_opt(o, "depths", [1, 3, 6])), float(_opt(o, "rho", 0.5)), _opt(o, "seeds", 10), c),
    "information-loss": lambda o, c: run_information_loss(),
}


def run_named(name: str, options: Dict[str, Any], config: ExperimentConfig) -> ExperimentResult:
    """Run experiment ``name`` with CLI ``options`` over ``config`` reshaped for it."""
    if name not in EXPERIMENTS:
        raise ParameterError(f"unknown experiment {name!r}; choose from {', '.join(sorted(EXPERIMENTS))}")
    return EXPERIMENTS[name](options, default_config(name, config))
