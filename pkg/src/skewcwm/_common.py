"""Types shared by the CWM engine, the FMR engine and the toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence

import numpy as np

from .dists import DistKind, Family


@dataclass(frozen=True)
class DatasetXY:
    """``N`` paired observations of covariates ``x`` (N, d) and responses ``y`` (N, p)."""

    x: np.ndarray
    y: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("x and y must be 2-D arrays")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"row counts differ: x has {x.shape[0]}, y has {y.shape[0]}")
        if x.shape[0] == 0:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (x.shape[0],):
                raise ValueError("labels must have one entry per observation")
            object.__setattr__(self, "labels", labels.astype(int))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def design(self) -> np.ndarray:
        """Rows ``(1, x_i')``."""
        return np.hstack([np.ones((self.n, 1)), self.x])

    def standardized(self) -> "DatasetXY":
        """Copy with every column centred and scaled to unit variance."""

        def z(a):
            sd = a.std(axis=0, ddof=1) if a.shape[0] > 1 else np.ones(a.shape[1])
            return (a - a.mean(axis=0)) / np.where(sd > 0, sd, 1.0)

        return DatasetXY(z(self.x), z(self.y), self.labels)


@dataclass(frozen=True)
class CwmSpec:
    """A cluster-weighted model: covariate family, response family and G."""

    x_family: Family
    y_family: Family
    n_groups: int
    d: int
    p: int
    has_covariates: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "x_family", Family(self.x_family))
        object.__setattr__(self, "y_family", Family(self.y_family))
        _check_dims(self.n_groups, self.d, self.p)

    @property
    def name(self) -> str:
        return f"{self.x_family.value}-{self.y_family.value}"

    def with_groups(self, g: int) -> "CwmSpec":
        return CwmSpec(self.x_family, self.y_family, g, self.d, self.p)


@dataclass(frozen=True)
class FmrSpec:
    """A finite mixture of regressions with fixed covariates."""

    y_family: Family
    n_groups: int
    d: int
    p: int
    has_covariates: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "y_family", Family(self.y_family))
        _check_dims(self.n_groups, self.d, self.p)

    @property
    def name(self) -> str:
        return f"FMR-{self.y_family.value}"

    def with_groups(self, g: int) -> "FmrSpec":
        return FmrSpec(self.y_family, g, self.d, self.p)


def _check_dims(g, d, p):
    for name, v in (("n_groups", g), ("d", d), ("p", p)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")


def parse_model(name: str, n_groups: int, d: int, p: int):
    """Build a spec from a model name such as ``"GH-ST"`` or ``"FMR-N"``."""
    parts = name.strip().upper().split("-")
    if len(parts) != 2:
        raise ValueError(f"model name must look like 'X-Y' or 'FMR-Y', got {name!r}")
    try:
        if parts[0] == "FMR":
            return FmrSpec(Family(parts[1]), n_groups, d, p)
        return CwmSpec(Family(parts[0]), Family(parts[1]), n_groups, d, p)
    except ValueError:
        raise ValueError(f"unknown family in model name {name!r}") from None


ALL_CWM_NAMES = tuple(f"{fx.value}-{fy.value}" for fx in Family for fy in Family)
ALL_FMR_NAMES = tuple(f"FMR-{fy.value}" for fy in Family)
ALL_MODEL_NAMES = ALL_CWM_NAMES + ALL_FMR_NAMES


@dataclass
class FmrParams:
    """Mixing weights and per-group regression blocks.

    Array shapes: ``weights`` (G,), ``beta`` (G, d+1, p), ``sigma_y`` (G, p, p),
    ``alpha_y`` (G, p). ``y_kinds`` holds one :class:`DistKind` per group.
    """

    weights: np.ndarray
    beta: np.ndarray
    sigma_y: np.ndarray
    alpha_y: np.ndarray
    y_kinds: tuple
    has_covariates: ClassVar[bool] = False

    @property
    def n_groups(self) -> int:
        return len(self.weights)

    def validate(self):
        _validate_weights(self.weights)
        _validate_block(self.sigma_y, self.alpha_y, self.y_kinds)


@dataclass
class CwmParams(FmrParams):
    """Full CWM parameter set: the FMR blocks plus per-group covariate blocks.

    Extra shapes: ``mu`` (G, d), ``sigma_x`` (G, d, d), ``alpha_x`` (G, d).
    """

    mu: np.ndarray = None
    sigma_x: np.ndarray = None
    alpha_x: np.ndarray = None
    x_kinds: tuple = ()
    has_covariates: ClassVar[bool] = True

    def validate(self):
        super().validate()
        _validate_block(self.sigma_x, self.alpha_x, self.x_kinds)

    def response_part(self) -> FmrParams:
        return FmrParams(self.weights, self.beta, self.sigma_y, self.alpha_y, self.y_kinds)


def _validate_weights(w):
    w = np.asarray(w)
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
        raise ValueError("mixing weights must be positive and sum to one")


def _validate_block(sigma, alpha, kinds):
    for g, kind in enumerate(kinds):
        np.linalg.cholesky(sigma[g])
        if not kind.family.skewed and np.any(alpha[g] != 0):
            raise ValueError(f"group {g}: normal block with nonzero skewness")


@dataclass(frozen=True)
class EMControls:
    """Stopping rule and safeguards for EM.

    ``criterion="relative"`` stops when ``|l_t - l_{t-1}| < tol * |l_t|``;
    ``"aitken"`` stops when the Aitken-extrapolated limit is within
    ``tol * |l_t|`` of the current value.

    ``accelerate=True`` interleaves squared extrapolation steps (SQUAREM)
    between pairs of EM updates. An extrapolated point is kept only if its
    log-likelihood is at least that of the EM iterate it replaces, so the
    recorded trace stays nondecreasing.
    """

    tol: float = 1e-8
    max_iter: int = 1000
    criterion: str = "relative"
    min_group_size: float | None = None
    accelerate: bool = False

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")
        if self.criterion not in ("relative", "aitken"):
            raise ValueError(f"unknown criterion {self.criterion!r}")


@dataclass
class FitReport:
    """Outcome of one EM run."""

    spec: object
    params: FmrParams | None
    loglik_trace: list
    z_final: np.ndarray | None
    map_labels: np.ndarray | None
    bic: float
    n_params: int
    converged: bool
    n_iter: int
    collapsed: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else -math.inf

    @property
    def ok(self) -> bool:
        return not self.collapsed and np.isfinite(self.loglik)


def count_params(spec, n_groups: int | None = None, d: int | None = None, p: int | None = None) -> int:
    """Number of free parameters of a CWM or FMR specification.

    ``n_groups``, ``d`` and ``p`` default to the values stored in ``spec``.
    """
    G = spec.n_groups if n_groups is None else n_groups
    d = spec.d if d is None else d
    p = spec.p if p is None else p
    k = (G - 1) + G * ((d + 1) * p + p * (p + 1) // 2)
    k += G * (p * spec.y_family.skewed + spec.y_family.n_conc)
    if spec.has_covariates:
        k += G * (d + d * (d + 1) // 2)
        k += G * (d * spec.x_family.skewed + spec.x_family.n_conc)
    return int(k)


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    """``2 loglik - n_params log N``; larger is better."""
    if n_obs < 1:
        raise ValueError("n_obs must be at least 1")
    return 2.0 * loglik - n_params * math.log(n_obs)


def canonical_labels(z: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """MAP labels ``1..G`` renumbered so that label 1 is the heaviest component."""
    order = np.argsort(-np.asarray(weights), kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[np.argmax(z, axis=1)] + 1
