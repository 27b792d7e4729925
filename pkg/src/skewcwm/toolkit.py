"""Initialisation, model selection, scoring and data simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from . import cwm
from ._common import (
    ALL_CWM_NAMES,
    ALL_FMR_NAMES,
    ALL_MODEL_NAMES,
    CwmParams,
    CwmSpec,
    DatasetXY,
    EMControls,
    FitReport,
    FmrParams,
    FmrSpec,
    bic,
    canonical_labels,
    count_params,
    parse_model,
)
from .dists import ComponentBlock, DistKind, Family, sample_mixing_weight, sample_vector

__all__ = [
    "DatasetXY",
    "SelectionGrid",
    "AllFitsFailedError",
    "init_labels",
    "protocol_inits",
    "run_protocol",
    "count_params",
    "bic",
    "adjusted_rand_index",
    "simulate_cwm",
    "PRESETS",
    "preset",
    "selection_study",
    "StudyResult",
    "match_components",
    "canonical_labels",
]


# --------------------------------------------------------------------------
# initialisation


def init_labels(data: DatasetXY, n_groups: int, scheme: str, rng: np.random.Generator) -> np.ndarray:
    """Starting responsibilities (N, G).

    ``"random-soft"`` draws uniform weights and normalises each row.
    ``"kmeans-hard"`` runs k-means (best of 10 starts) on the standardised
    concatenation of ``x`` and ``y`` and returns the 0/1 indicator matrix.
    """
    if n_groups < 1:
        raise ValueError("n_groups must be at least 1")
    n = data.n
    if n_groups == 1:
        return np.ones((n, 1))
    if scheme == "random-soft":
        z = rng.random((n, n_groups))
        return z / z.sum(axis=1, keepdims=True)
    if scheme == "kmeans-hard":
        if n < n_groups:
            raise ValueError("fewer observations than groups")
        both = np.hstack([data.x, data.y])
        sd = both.std(axis=0)
        both = (both - both.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        for _ in range(10):
            km = KMeans(n_clusters=n_groups, n_init=10, random_state=int(rng.integers(2**31 - 1)))
            lab = km.fit_predict(both)
            if np.unique(lab).size == n_groups:
                break
        else:
            raise RuntimeError("k-means kept producing empty clusters")
        return np.eye(n_groups)[lab]
    raise ValueError(f"unknown initialisation scheme {scheme!r}")


def protocol_inits(data: DatasetXY, n_groups: int, rng: np.random.Generator, n_random: int = 10) -> list:
    """The standard starting set: ``n_random`` random-soft starts then one k-means start.

    With ``G = 1`` there is only one possible start, returned once.
    """
    if n_groups == 1:
        return [np.ones((data.n, 1))]
    inits = [init_labels(data, n_groups, "random-soft", rng) for _ in range(n_random)]
    inits.append(init_labels(data, n_groups, "kmeans-hard", rng))
    return inits


#: Controls used by the simulation studies: accelerated EM to a relative
#: change of 1e-8, after screening every start at 1e-5.
STUDY_CONTROLS = EMControls(tol=1e-8, max_iter=3000, accelerate=True)
STUDY_SCREEN = EMControls(tol=1e-5, max_iter=1000, accelerate=True)


class AllFitsFailedError(RuntimeError):
    """Every starting point of a protocol run collapsed or failed."""

    def __init__(self, spec, reports):
        super().__init__(f"all {len(reports)} starts failed for {spec.name} with G={spec.n_groups}")
        self.spec = spec
        self.reports = reports


def run_protocol(
    spec,
    data: DatasetXY,
    rng: np.random.Generator | None = None,
    controls: EMControls | None = None,
    inits: Sequence[np.ndarray] | None = None,
    screen: EMControls | None = None,
) -> FitReport:
    """Fit from every start in the protocol and keep the highest log-likelihood.

    Either ``rng`` (to draw :func:`protocol_inits`) or explicit ``inits``
    must be supplied. Collapsed runs are discarded; ties go to the earliest
    start, so the result does not depend on execution order.

    With ``screen`` set, every start is first run under those (typically
    looser) controls and only the winner is continued under ``controls``.
    The returned trace is the screening trace followed by the refinement.

    Raises
    ------
    AllFitsFailedError
        If no start produced a usable fit.
    """
    if inits is None:
        if rng is None:
            raise ValueError("supply rng or inits")
        inits = protocol_inits(data, spec.n_groups, rng)
    reports = [cwm.fit(spec, data, z0, screen or controls) for z0 in inits]
    ok = [i for i, r in enumerate(reports) if r.ok]
    if not ok:
        raise AllFitsFailedError(spec, reports)
    ranked = sorted(ok, key=lambda i: (-reports[i].loglik, i))
    best_i = ranked[0]
    best = reports[best_i]
    if screen is not None:
        for i in ranked:
            refined = _refine(spec, data, reports[i], controls or EMControls())
            if refined is not None:
                best_i, best = i, refined
                break
        else:
            raise AllFitsFailedError(spec, reports)
    best.diagnostics["start_logliks"] = [r.loglik if r.ok else None for r in reports]
    best.diagnostics["best_start"] = best_i
    return best


def _refine(spec, data, screened: FitReport, controls: EMControls) -> FitReport:
    more = cwm.fit(spec, data, controls=controls, init_params=screened.params)
    if not more.ok:
        return None
    more.loglik_trace = screened.loglik_trace[:-1] + more.loglik_trace
    more.n_iter += screened.n_iter
    merged = dict(screened.diagnostics)
    for key, val in more.diagnostics.items():
        merged[key] = merged.get(key, 0) + val if isinstance(val, int) and not isinstance(val, bool) else val
    merged["screen_iter"] = screened.n_iter
    more.diagnostics = merged
    return more


# --------------------------------------------------------------------------
# scoring


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Pair-counting adjusted Rand index between two partitions."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D and of equal length")
    return float(adjusted_rand_score(a, b))


def match_components(true_labels, est_labels, n_groups: int) -> np.ndarray:
    """Permutation ``perm`` with ``perm[g_true] = g_est`` maximising agreement.

    Labels are 1-based.
    """
    conf = np.zeros((n_groups, n_groups))
    for t, e in zip(true_labels, est_labels):
        if 1 <= t <= n_groups and 1 <= e <= n_groups:
            conf[t - 1, e - 1] += 1
    rows, cols = linear_sum_assignment(-conf)
    perm = np.empty(n_groups, dtype=int)
    perm[rows] = cols
    return perm


# --------------------------------------------------------------------------
# simulation


def simulate_cwm(spec: CwmSpec, params: CwmParams, n_obs: int, rng: np.random.Generator) -> DatasetXY:
    """Draw ``n_obs`` observations from a CWM.

    Group labels follow the mixing weights; ``x`` is drawn from the
    covariate block and ``y = B' x* + V alpha_Y + sqrt(V) u`` from the
    response block. Labels are stored 1-based.
    """
    G, d, p = spec.n_groups, spec.d, spec.p
    params.validate()
    labels = rng.choice(G, size=n_obs, p=params.weights)
    x = np.empty((n_obs, d))
    y = np.empty((n_obs, p))
    for g in range(G):
        idx = np.flatnonzero(labels == g)
        if idx.size == 0:
            continue
        xb = ComponentBlock(params.mu[g], params.sigma_x[g], params.alpha_x[g], params.x_kinds[g])
        xg = sample_vector(xb, rng, size=idx.size)
        loc = np.hstack([np.ones((idx.size, 1)), xg]) @ params.beta[g]
        v = np.atleast_1d(sample_mixing_weight(params.y_kinds[g], rng, size=idx.size))
        L = np.linalg.cholesky(params.sigma_y[g])
        u = rng.standard_normal((idx.size, p)) @ L.T
        x[idx] = xg
        y[idx] = loc + v[:, None] * params.alpha_y[g] + np.sqrt(v)[:, None] * u
    return DatasetXY(x, y, labels + 1)


def _kinds(family, values):
    family = Family(family)
    if family is Family.N:
        return tuple(DistKind.normal() for _ in values)
    ctor = {
        Family.ST: DistKind.skew_t,
        Family.GH: lambda v: DistKind.gen_hyperbolic(*v),
        Family.VG: DistKind.variance_gamma,
        Family.NIG: DistKind.nig,
    }[family]
    return tuple(ctor(v) for v in values)


_T1 = dict(
    weights=[0.5, 0.5],
    mu=[[0.0, 0.0, 0.0], [3.0, 3.0, 3.0]],
    alpha_x=[[2.0, 2.0, 2.0], [-3.0, -3.0, -3.0]],
    sigma_x=[
        [[1.0, 0.1, 0.2], [0.1, 3.0, 0.1], [0.2, 0.1, 2.0]],
        [[1.0, 0.1, 0.1], [0.1, 1.0, 0.2], [0.1, 0.2, 1.0]],
    ],
    beta=[
        [[-6.0, 1.0], [-1.5, -1.5], [-0.5, 1.5], [2.5, 1.5]],
        [[10.0, -7.5], [-6.0, 4.0], [4.0, 5.5], [-3.5, -3.0]],
    ],
    alpha_y=[[2.0, -2.0], [-2.0, 2.0]],
    sigma_y=[[[1.0, 0.2], [0.2, 1.0]], [[1.0, 0.3], [0.3, 1.0]]],
)

_T3 = dict(
    weights=[0.5, 0.5],
    mu=[[-2.5, 4.0, 3.0], [2.5, -3.0, -3.0]],
    alpha_x=[[-3.0, 2.5, -2.0], [2.5, 3.0, -1.5]],
    sigma_x=[
        [[2.9, -0.5, -0.05], [-0.5, 0.45, -0.75], [-0.05, -0.75, 1.95]],
        [[2.3, -0.9, -0.35], [-0.9, 1.55, 0.25], [-0.35, 0.25, 1.0]],
    ],
    beta=[
        [[-6.0, 1.0], [-1.5, -1.5], [-0.5, 1.5], [2.5, 1.5]],
        [[-10.0, 7.5], [-1.0, -1.0], [-0.5, 1.5], [2.0, 2.0]],
    ],
    alpha_y=[[2.0, -2.5], [-1.0, 2.0]],
    sigma_y=[[[1.8, -0.3], [-0.3, 2.0]], [[2.0, -0.35], [-0.35, 2.8]]],
)

# name -> (base table, covariate family, response family, x concentrations, y concentrations)
_PRESET_TABLE = {
    "table1-ghgh": (_T1, "GH", "GH", [(4.0, 0.3), (10.0, 0.3)], [(10.0, 0.3), (4.0, 0.3)]),
    "table1-vgnig": (_T1, "VG", "NIG", [4.0, 20.0], [4.0, 10.0]),
    "table1-stn": (_T1, "ST", "N", [7.0, 7.0], [None, None]),
    "table1-nnig": (_T1, "N", "NIG", [None, None], [4.0, 10.0]),
    "table3-stst": (_T3, "ST", "ST", [7.0, 7.0], [7.0, 7.0]),
    "table3-stn": (_T3, "ST", "N", [7.0, 7.0], [None, None]),
    "table3-nst": (_T3, "N", "ST", [None, None], [7.0, 7.0]),
}
PRESETS = tuple(_PRESET_TABLE)


def preset(name: str) -> tuple[CwmSpec, CwmParams]:
    """Spec and parameters of a named simulation design (d=3, p=2, G=2).

    Normal blocks drop the skewness vector of the base table.
    """
    try:
        base, fx, fy, cx, cy = _PRESET_TABLE[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    spec = CwmSpec(Family(fx), Family(fy), 2, 3, 2)
    arr = {k: np.array(v, dtype=float) for k, v in base.items()}
    if not spec.x_family.skewed:
        arr["alpha_x"] = np.zeros_like(arr["alpha_x"])
    if not spec.y_family.skewed:
        arr["alpha_y"] = np.zeros_like(arr["alpha_y"])
    params = CwmParams(
        arr["weights"], arr["beta"], arr["sigma_y"], arr["alpha_y"], _kinds(fy, cy),
        mu=arr["mu"], sigma_x=arr["sigma_x"], alpha_x=arr["alpha_x"], x_kinds=_kinds(fx, cx),
    )
    params.validate()
    return spec, params


# --------------------------------------------------------------------------
# selection studies


@dataclass(frozen=True)
class SelectionGrid:
    """Model names (``"X-Y"`` or ``"FMR-Y"``) crossed with numbers of groups."""

    models: tuple
    g_values: tuple = (1, 2, 3)

    def __post_init__(self):
        models = tuple(m.strip().upper() for m in self.models)
        if not models or not self.g_values:
            raise ValueError("selection grid needs at least one model and one G")
        for m in models:
            parse_model(m, 1, 1, 1)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "g_values", tuple(int(g) for g in self.g_values))

    @classmethod
    def full(cls, g_values=(1, 2, 3)):
        return cls(ALL_MODEL_NAMES, g_values)


@dataclass
class CellResult:
    """Outcome of one (model, G) protocol run on one dataset."""

    model: str
    n_groups: int
    loglik: float
    n_params: int
    bic: float
    converged: bool
    n_iter: int
    ari: float | None
    report: FitReport | None = field(default=None, repr=False)
    error: str | None = None

    def row(self) -> dict:
        return {
            "model": self.model,
            "G": self.n_groups,
            "loglik": self.loglik,
            "n_params": self.n_params,
            "bic": self.bic,
            "ari": self.ari,
            "converged": self.converged,
            "n_iter": self.n_iter,
            **({"error": self.error} if self.error else {}),
        }


def fit_grid(
    data: DatasetXY,
    grid: SelectionGrid,
    rng: np.random.Generator,
    controls: EMControls | None = None,
    keep_reports: bool = False,
    progress: Callable[[str], None] | None = None,
    screen: EMControls | None = None,
) -> list:
    """Run the protocol for every (model, G) cell on one dataset.

    The starting points are drawn once per G and shared by all models, so
    CWMs and FMRs are compared from identical starts.
    """
    inits = {g: protocol_inits(data, g, rng) for g in grid.g_values}
    cells = []
    for name in grid.models:
        for g in grid.g_values:
            spec = parse_model(name, g, data.d, data.p)
            k = count_params(spec)
            try:
                rep = run_protocol(spec, data, controls=controls, inits=inits[g], screen=screen)
            except AllFitsFailedError as exc:
                cells.append(CellResult(name, g, -math.inf, k, -math.inf, False, 0, None, None, str(exc)))
                continue
            ari = None
            if data.labels is not None:
                ari = adjusted_rand_index(data.labels, rep.map_labels)
            cells.append(
                CellResult(name, g, rep.loglik, k, rep.bic, rep.converged, rep.n_iter, ari, rep if keep_reports else None)
            )
            if progress:
                progress(f"{name} G={g} bic={rep.bic:.2f}")
    return cells


def best_cell(cells, prefix: str | None = None):
    """Highest-BIC successful cell, optionally restricted to CWMs (``"CWM"``) or FMRs (``"FMR"``)."""
    pool = [c for c in cells if np.isfinite(c.bic)]
    if prefix == "FMR":
        pool = [c for c in pool if c.model.startswith("FMR-")]
    elif prefix == "CWM":
        pool = [c for c in pool if not c.model.startswith("FMR-")]
    if not pool:
        return None
    return max(pool, key=lambda c: c.bic)


def overall_winner(cells):
    """The (model, G) cell reported as the winner of a grid.

    An FMR log-likelihood leaves out the covariate density, so its BIC is not
    on the same scale as a CWM's. The winner is therefore the best CWM, and
    the best FMR only when the grid holds no CWMs.
    """
    return best_cell(cells, "CWM") or best_cell(cells, "FMR")


@dataclass
class StudyResult:
    """Tallies of BIC-selected G per model and the per-replicate overall winners."""

    generator: str
    grid: SelectionGrid
    chosen_g: dict  # model -> list of chosen G (None for failure) per replicate
    winners: list  # (model, G) per replicate
    ari: dict  # model -> list of ARI of the BIC-chosen fit per replicate
    cells: list  # per replicate list of CellResult

    def tally_rows(self) -> list:
        rows = []
        for model in self.grid.models:
            picks = self.chosen_g[model]
            for g in self.grid.g_values:
                rows.append({"generator": self.generator, "model": model, "G": g, "count": picks.count(g)})
        return rows

    def mean_ari(self) -> dict:
        out = {}
        for model, vals in self.ari.items():
            v = [a for a in vals if a is not None]
            out[model] = float(np.mean(v)) if v else None
        return out


def selection_study(
    grid: SelectionGrid,
    generator: Callable[[np.random.Generator], DatasetXY],
    n_replicates: int,
    rng: np.random.Generator,
    controls: EMControls | None = None,
    generator_name: str = "custom",
    progress: Callable[[str], None] | None = None,
    screen: EMControls | None = None,
) -> StudyResult:
    """BIC selection over ``grid`` on ``n_replicates`` simulated datasets."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    chosen = {m: [] for m in grid.models}
    ari = {m: [] for m in grid.models}
    winners = []
    all_cells = []
    for rep in range(n_replicates):
        data = generator(rng)
        cells = fit_grid(data, grid, rng, controls, screen=screen)
        all_cells.append(cells)
        for model in grid.models:
            best = best_cell([c for c in cells if c.model == model])
            chosen[model].append(best.n_groups if best else None)
            ari[model].append(best.ari if best else None)
        top = overall_winner(cells)
        winners.append((top.model, top.n_groups) if top else None)
        if progress:
            progress(f"replicate {rep + 1}/{n_replicates}: winner {winners[-1]}")
    return StudyResult(generator_name, grid, chosen, winners, ari, all_cells)


def preset_generator(name: str, n_obs: int = 400):
    """Callable drawing one dataset from a named preset."""
    spec, params = preset(name)
    return lambda rng: simulate_cwm(spec, params, n_obs, rng)
