"""Pydantic documents for every JSON artifact dashlab writes."""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class TreeNodeDocument(BaseModel):
    """One node; leaves carry no feature, threshold or children."""
    feature: Optional[int] = Field(None, description="Split feature index")
    threshold: Optional[float] = Field(None, description="Rows with x <= threshold go left")
    left: Optional[int] = Field(None, description="Left child node index")
    right: Optional[int] = Field(None, description="Right child node index")
    value: float = Field(..., description="Mean residual of covered training rows")
    cover: int = Field(..., description="Training rows reaching the node")
    depth: int = Field(..., description="Node depth, root = 0")


class TreeDocument(BaseModel):
    nodes: List[TreeNodeDocument] = Field(..., description="Nodes in pre-order, root first")


class EnsembleDocument(BaseModel):
    """Serialized boosted ensemble."""
    base_score: float = Field(..., description="Training target mean")
    learning_rate: float = Field(..., description="Shrinkage applied to every tree")
    trees: List[TreeDocument] = Field(default_factory=list)
    split_log: List[List[int]] = Field(default_factory=list, description="(tree, depth, feature) per split")
    config: Dict[str, Any] = Field(..., description="Training configuration echo")
    seed: Optional[int] = Field(None, description="Training seed echo")
    n_features: int = Field(..., description="Input width")
    feature_names: List[str] = Field(default_factory=list)
    degenerate: bool = Field(False, description="Constant target, no trees fitted")


class AttributionSidecar(BaseModel):
    """Metadata stored next to an attribution matrix CSV."""
    seeds: List[int] = Field(..., description="Training seed per row")
    method: str = Field(..., description="shap, permutation or split_count")
    eval_slice_seed: int = Field(..., description="Seed of the held-out evaluation slice")
    background_seed: int = Field(..., description="Seed of the background sample")
    feature_names: List[str] = Field(default_factory=list)
    group_of: Optional[List[Optional[int]]] = Field(None, description="Group index per feature")
    first_movers: Optional[List[List[Optional[int]]]] = Field(
        None, description="First-mover feature per row and group"
    )


class PairDiagnosticDocument(BaseModel):
    j: int
    k: int
    name_j: Optional[str] = None
    name_k: Optional[str] = None
    M: int = Field(..., description="Models behind the estimate")
    mean_gap: float = Field(..., description="|mean(phi_j - phi_k)|")
    noise_sd: float = Field(..., description="Sample sd of phi_j - phi_k")
    z: float = Field(..., description="Z statistic, Infinity when noise_sd is 0")
    snr: float = Field(..., description="mean_gap / noise_sd")
    flip_empirical: float
    flip_predicted: float
    verdict: str = Field(..., description="stable, unstable or degenerate")


class ScreenDocument(BaseModel):
    j: int
    k: int
    name_j: Optional[str] = None
    name_k: Optional[str] = None
    p_hat_j: float = Field(..., description="Fraction of trees using feature j")
    p_hat_k: float = Field(..., description="Fraction of trees using feature k")
    t_eff: float = Field(..., description="Effective number of exchangeable trees")
    z_split: float
    flagged: bool


class DiagnosticSummary(BaseModel):
    n_pairs: int
    n_unstable: int
    pearson_r_between_z_and_flip: Optional[float] = Field(
        None, description="Undefined with fewer than 3 finite pairs or constant inputs"
    )


class DiagnosticReport(BaseModel):
    groups: List[List[int]] = Field(default_factory=list, description="Correlated feature groups")
    flagged_zero_variance: List[int] = Field(default_factory=list)
    screens: List[ScreenDocument] = Field(default_factory=list)
    pairs: List[PairDiagnosticDocument] = Field(default_factory=list)
    summary: DiagnosticSummary


class ConsensusReport(BaseModel):
    """DASH consensus attribution."""
    method: str = Field(..., description="mean, trimmed or median")
    trim: float = Field(0.0, description="Fraction trimmed per tail")
    M: int = Field(..., description="Models aggregated")
    values: List[float] = Field(..., description="Consensus attribution per feature")
    feature_names: List[str] = Field(default_factory=list)
    tied_groups: List[List[int]] = Field(default_factory=list)
    balanced: bool
    first_mover_counts: List[int] = Field(default_factory=list)
    ranking: List[List[int]] = Field(default_factory=list, description="Ordered blocks, ties share a block")


class ExperimentDocument(BaseModel):
    experiment: str
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    extras: Dict[str, Any] = Field(default_factory=dict)
    timings: Dict[str, Any] = Field(default_factory=dict)
