from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ============================================================================
# SOLVER / ALGORITHM CONFIGURATION
# ============================================================================

class SolverConfig(BaseModel):
    """Controls of the Cayley curvilinear search used for each core update."""
    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=500, gt=0)
    step: float = Field(default=1e-1, gt=0)  # initial trial step tau_0
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    grad_tol: float = Field(default=1e-8, gt=0)
    obj_tol: float = Field(default=1e-10, gt=0)
    max_backtracks: int = Field(default=50, gt=0)
    use_bb: bool = False  # Barzilai-Borwein trial step instead of a fixed tau_0


class TTPCAConfig(BaseModel):
    """Either a relative singular-value threshold or a fixed rank vector (r1..rn)."""
    model_config = ConfigDict(frozen=True)

    tau: Optional[float] = Field(default=None, ge=0, lt=1)
    ranks: Optional[Tuple[int, ...]] = None
    center: bool = False

    @field_validator("ranks")
    @classmethod
    def ranks_positive(cls, value):
        if value is not None:
            if len(value) == 0:
                raise ValueError("rank vector must not be empty")
            if any(r < 1 for r in value):
                raise ValueError("ranks must be >= 1")
        return value

    @model_validator(mode="after")
    def exactly_one_mode(self):
        if (self.tau is None) == (self.ranks is None):
            raise ValueError("exactly one of tau or ranks must be set")
        return self

    @property
    def mode(self) -> str:
        return "threshold" if self.tau is not None else "fixed"


class TTNPEConfig(BaseModel):
    """Rank vector (r1..rn) with embedding dimension rn, graph and sweep controls."""
    model_config = ConfigDict(frozen=True)

    ranks: Tuple[int, ...]
    k: int = Field(default=5, ge=1)
    epsilon: Union[float, Literal["auto"]] = "auto"
    max_sweeps: int = Field(default=20, gt=0)
    sweep_tol: float = Field(default=1e-8, gt=0)
    normalize_affinity: bool = False
    solver: SolverConfig = Field(default_factory=SolverConfig)

    @field_validator("ranks")
    @classmethod
    def ranks_positive(cls, value):
        if len(value) == 0 or any(r < 1 for r in value):
            raise ValueError("ranks must be a non-empty vector of positive integers")
        return value

    @field_validator("epsilon")
    @classmethod
    def epsilon_positive(cls, value):
        if value != "auto" and value <= 0:
            raise ValueError("epsilon must be positive or 'auto'")
        return value

    @property
    def embedding_dim(self) -> int:
        return self.ranks[-1]


# ============================================================================
# REPORTING RECORDS
# ============================================================================

StorageMethod = Literal["PCA", "T-PCA", "TT-PCA", "KNN", "TNPE", "TT-NPE"]


class StorageReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: StorageMethod
    subspace_dim: int = Field(ge=0)
    total_storage: int = Field(ge=0)
    compression_ratio: float = Field(ge=0)


class SweepRow(BaseModel):
    method: str
    parameter: str  # rank vector "2,3,2" or "tau=0.1"
    knn_k: Optional[int] = None
    compression_ratio: float = Field(ge=0)
    classification_error: Optional[float] = Field(default=None, ge=0, le=1)
    reconstruction_error: Optional[float] = Field(default=None, ge=0)
    wall_time_ms: float = Field(default=0.0, ge=0)
    storage_only: bool = False


# ============================================================================
# EXPERIMENT CONFIGURATION
# ============================================================================

SweepMethod = Literal["ttpca", "ttnpe", "pca", "knn"]


class ExperimentConfig(BaseModel):
    train: str
    train_labels: Optional[str] = None  # IDX label file paired with `train`
    test: Optional[str] = None
    test_labels: Optional[str] = None
    dims: Optional[Tuple[int, ...]] = None
    method: SweepMethod = "ttpca"
    ranks: List[Tuple[int, ...]] = Field(default_factory=list)
    tau: List[float] = Field(default_factory=list)
    knn_k: List[int] = Field(default_factory=lambda: [5])
    noise_sigma: float = Field(default=0.0, ge=0)
    seed: int = 0
    classes: Optional[List[int]] = None
    train_cap: Optional[int] = Field(default=None, gt=0)
    test_cap: Optional[int] = Field(default=None, gt=0)
    test_fraction: float = Field(default=0.5, gt=0, lt=1)
    epsilon: Union[float, Literal["auto"]] = "auto"
    center: bool = False
    include_tnpe: bool = False
    max_sweeps: int = Field(default=20, gt=0)
    out: str = "sweep.csv"

    @field_validator("tau")
    @classmethod
    def tau_range(cls, value):
        if any(not 0 <= t < 1 for t in value):
            raise ValueError("tau values must lie in [0, 1)")
        return value

    @field_validator("knn_k")
    @classmethod
    def k_positive(cls, value):
        if any(k < 1 for k in value):
            raise ValueError("knn_k values must be >= 1")
        return value

    @field_validator("ranks")
    @classmethod
    def ranks_positive(cls, value):
        for ranks in value:
            if len(ranks) == 0 or any(r < 1 for r in ranks):
                raise ValueError(f"invalid rank vector {ranks}")
        return value

    @field_validator("epsilon")
    @classmethod
    def epsilon_positive(cls, value):
        if value != "auto" and value <= 0:
            raise ValueError("epsilon must be positive or 'auto'")
        return value

    @model_validator(mode="after")
    def grids_present(self):
        if self.method == "ttpca" and not (self.ranks or self.tau):
            raise ValueError("ttpca sweeps need a non-empty ranks or tau grid")
        if self.method in ("ttnpe", "pca") and not self.ranks:
            raise ValueError(f"{self.method} sweeps need a non-empty ranks grid")
        if self.method in ("ttnpe", "knn") and not self.knn_k:
            raise ValueError(f"{self.method} sweeps need a non-empty knn_k grid")
        return self
