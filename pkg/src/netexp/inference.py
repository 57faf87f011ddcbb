"""Randomization inference for spillovers and social influence on networks.

All tests share one engine: residualize the outcome under the null being
tested, re-draw the treatment vector R times from the actual design
(replication r uses salt + "#" + r), recompute the test statistic on each
re-draw, and report p = (1 + #{null stat >= observed}) / (R + 1).  The
add-one form with a weak inequality keeps the test valid at any R and
bounds p away from zero.

Statistics are regression-based: "score" is |coefficient of the exposure
T| from least squares of the residualized outcome on (1, z, T); "exposure"
omits the z column (the classic, deliberately naive form); "f" is the
joint F statistic of (z, T), used for acceptance regions.  A re-draw on
which the statistic is undefined (rank deficiency) contributes -inf, never
counts as extreme, and is tallied; more than 50% such draws aborts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStatisticError
from .exposure import exposure_batch, fraction_adopting_peers, fraction_treated_peers
from .netgraph import Graph
from .randomizer import (
    CompleteRandomization,
    Design,
    conditional_draw_batch,
    design_description,
    draw_batch,
    replication_salts,
)
from .hashing import hash_uniform

_CHUNK_CELLS = 4_000_000
_CACHE_CELLS = 30_000_000  # above this, grid tests re-draw instead of caching
_REL_TOL = 1e-12


# ------------------------------------------------------------- statistics

def _moments(y: np.ndarray, Z: np.ndarray, T: np.ndarray):
    """Centered cross-moments of (y, z, t) per replication row."""
    n = y.shape[0]
    sy = y.sum()
    syy = float(y @ y) - sy * sy / n
    sz = Z.sum(axis=1)
    st = T.sum(axis=1)
    szz = sz - sz * sz / n  # z is binary, so sum(z^2) = sum(z)
    stt = np.einsum("rn,rn->r", T, T) - st * st / n
    szt = np.einsum("rn,rn->r", Z, T) - sz * st / n
    szy = Z @ y - sz * (sy / n)
    sty = T @ y - st * (sy / n)
    return syy, szz, stt, szt, szy, sty


def _rho_batch(y, Z, T, adjusted: bool) -> np.ndarray:
    """OLS exposure coefficients per row; NaN marks rank deficiency."""
    n = y.shape[0]
    _, szz, stt, szt, szy, sty = _moments(y, Z, T)
    tol = _REL_TOL * n
    out = np.full(Z.shape[0], np.nan)
    t_ok = stt > tol
    if not adjusted:
        np.divide(sty, stt, out=out, where=t_ok)
        return out
    det = szz * stt - szt * szt
    z_ok = szz > tol
    full = t_ok & z_ok & (det > _REL_TOL * szz * stt)
    np.divide(szz * sty - szt * szy, det, out=out, where=full)
    # constant z column: drop it rather than fail the draw
    drop_z = t_ok & ~z_ok
    np.divide(sty, stt, out=out, where=drop_z)
    return out


def _f_batch(y, Z, T) -> np.ndarray:
    """Joint F of (z, t) against the intercept-only fit; NaN if undefined."""
    n = y.shape[0]
    syy, szz, stt, szt, szy, sty = _moments(y, Z, T)
    tol = _REL_TOL * n
    R = Z.shape[0]
    out = np.full(R, np.nan)
    if syy <= tol:
        # outcome has no variance at all: nothing to explain
        out[:] = 0.0
        return out
    det = szz * stt - szt * szt
    t_ok = stt > tol
    full = t_ok & (szz > tol) & (det > _REL_TOL * szz * stt)
    expl = np.zeros(R)
    q = np.zeros(R)
    b_z = np.divide(stt * szy - szt * sty, det, out=np.zeros(R), where=full)
    b_t = np.divide(szz * sty - szt * szy, det, out=np.zeros(R), where=full)
    expl[full] = (b_z * szy + b_t * sty)[full]
    q[full] = 2
    drop_z = t_ok & ~full & (szz <= tol)
    expl_solo = np.divide(sty * sty, stt, out=np.zeros(R), where=t_ok)
    expl[drop_z] = expl_solo[drop_z]
    q[drop_z] = 1
    defined = full | drop_z
    rss = np.maximum(syy - expl, 0.0)
    dof = np.maximum(n - q - 1, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (expl / np.maximum(q, 1.0)) / (rss / dof)
    f = np.where(rss <= _REL_TOL * syy, np.where(expl > tol, np.inf, 0.0), f)
    out[defined] = f[defined]
    return out


@dataclass(frozen=True)
class Statistic:
    """Named test statistic with matching scalar and batch forms."""

    name: str
    batch: callable

    def compute_batch(self, y, Z, T) -> np.ndarray:
        return self.batch(np.asarray(y, dtype=np.float64),
                          np.asarray(Z, dtype=np.float64),
                          np.asarray(T, dtype=np.float64))

    def compute(self, y, z, t) -> float:
        val = self.compute_batch(y, np.asarray(z, dtype=np.float64)[None, :],
                                 np.asarray(t, dtype=np.float64)[None, :])[0]
        if np.isnan(val):
            raise DegenerateStatisticError(
                f"statistic {self.name!r} undefined on the observed data "
                "(constant or collinear regressors)"
            )
        return float(val)


_REGISTRY = {
    "score": Statistic("score", lambda y, Z, T: np.abs(_rho_batch(y, Z, T, True))),
    "score_right": Statistic("score_right", lambda y, Z, T: _rho_batch(y, Z, T, True)),
    "score_left": Statistic("score_left", lambda y, Z, T: -_rho_batch(y, Z, T, True)),
    "exposure": Statistic("exposure", lambda y, Z, T: np.abs(_rho_batch(y, Z, T, False))),
    "exposure_right": Statistic("exposure_right", lambda y, Z, T: _rho_batch(y, Z, T, False)),
    "f": Statistic("f", _f_batch),
}


def get_statistic(spec) -> Statistic:
    """Resolve a statistic name or wrap a callable (y, z, t) -> float."""
    if isinstance(spec, Statistic):
        return spec
    if isinstance(spec, str):
        if spec not in _REGISTRY:
            raise ValueError(f"unknown statistic {spec!r}; have {sorted(_REGISTRY)}")
        return _REGISTRY[spec]
    if callable(spec):
        def batch(y, Z, T, fn=spec):
            out = np.empty(Z.shape[0])
            for r in range(Z.shape[0]):
                try:
                    out[r] = fn(y, Z[r], T[r])
                except DegenerateStatisticError:
                    out[r] = np.nan
            return out

        return Statistic(getattr(spec, "__name__", "custom"), batch)
    raise ValueError(f"cannot interpret statistic {spec!r}")


def score_statistic_rho(y_resid, z, t) -> float:
    """|OLS coefficient of t| regressing y_resid on (1, z, t)."""
    y = np.asarray(y_resid, dtype=np.float64)
    zv = np.asarray(getattr(z, "z", z), dtype=np.float64)
    tv = np.asarray(getattr(t, "t", t), dtype=np.float64)
    if not y.shape == zv.shape == tv.shape:
        raise ValueError("y_resid, z and t must have equal lengths")
    return _REGISTRY["score"].compute(y, zv, tv)


# ------------------------------------------------------------ result types

@dataclass(frozen=True, eq=False)
class TestResult:
    stat_obs: float
    p_value: float
    replications: int
    null_quantiles: dict
    degenerate: int
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class AcceptanceRegion:
    tau_grid: np.ndarray
    rho_grid: np.ndarray
    p: np.ndarray
    alpha: float
    accepted: np.ndarray
    replications: int


@dataclass(frozen=True)
class FocalSet:
    nodes: frozenset
    warning: bool = False

    def sorted(self) -> np.ndarray:
        return np.array(sorted(self.nodes), dtype=np.int64)


# -------------------------------------------------------------- the engine

def _as_float_vector(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "z", x), dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def _null_quantiles(samples: list[np.ndarray]) -> dict:
    if samples:
        allv = np.concatenate(samples)
        finite = allv[np.isfinite(allv)]
    else:
        finite = np.array([])
    if finite.size == 0:
        return {}
    qs = np.quantile(finite, [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0])
    return {
        "min": float(qs[0]), "p05": float(qs[1]), "p25": float(qs[2]),
        "p50": float(qs[3]), "p75": float(qs[4]), "p95": float(qs[5]),
        "max": float(qs[6]), "mean": float(finite.mean()),
    }


def _mc_test(stat, y_stat, stat_obs, R, make_chunk, metadata) -> TestResult:
    count_ge = 0
    degenerate = 0
    kept: list[np.ndarray] = []
    done = 0
    while done < R:
        Zs, Ts, take = make_chunk(done)
        s = stat.compute_batch(y_stat, Zs, Ts)
        bad = np.isnan(s)
        degenerate += int(bad.sum())
        s = np.where(bad, -np.inf, s)
        count_ge += int((s >= stat_obs).sum())
        kept.append(s[~bad])
        done += take
    if degenerate > R / 2:
        raise DegenerateStatisticError(
            f"statistic undefined on {degenerate} of {R} re-draws"
        )
    return TestResult(
        stat_obs=float(stat_obs),
        p_value=(1 + count_ge) / (R + 1),
        replications=R,
        null_quantiles=_null_quantiles(kept),
        degenerate=degenerate,
        metadata=metadata,
    )


def _algorithm1(y_resid, z_obs, design, graph, stat, R, salt, metadata) -> TestResult:
    t_obs = fraction_treated_peers(graph, z_obs).t
    stat_obs = stat.compute(y_resid, z_obs, t_obs)
    chunk = max(1, min(R, _CHUNK_CELLS // max(graph.n, 1)))

    def make_chunk(done):
        take = min(chunk, R - done)
        salts = replication_salts(salt, take, start=done)
        Z = draw_batch(design, graph, salts).astype(np.float64)
        return Z, exposure_batch(graph, Z), take

    return _mc_test(stat, y_resid, stat_obs, R, make_chunk, metadata)


def test_sharp_null(y, z, design: Design, graph: Graph, tau0: float,
                    statistic="score", R: int = 1000, salt: str = "test") -> TestResult:
    """Test a constant-direct-effect, no-spillover null at direct effect tau0.

    The null says unit i's outcome would be y_i - tau0*z_i under any other
    assignment; the residualized outcome is therefore invariant across
    re-draws of the design, and the observed statistic is compared with its
    re-randomization distribution.
    """
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    stat = get_statistic(statistic)
    y_resid = yv - tau0 * zv
    metadata = {"test": "sharp_null", "design": design_description(design),
                "statistic": stat.name, "tau0": float(tau0), "salt": salt}
    return _algorithm1(y_resid, zv, design, graph, stat, R, salt, metadata)


class _DrawCache:
    """Re-draw chunks for grid tests, materialized once when they fit."""

    def __init__(self, design, graph, R, salt, conditional_fixed=None):
        self.design = design
        self.graph = graph
        self.R = R
        self.salt = salt
        self.fixed = conditional_fixed
        self.chunk = max(1, min(R, _CHUNK_CELLS // max(graph.n, 1)))
        self._cached = None
        if R * graph.n <= _CACHE_CELLS:
            self._cached = list(self._generate())

    def _draw(self, salts):
        if self.fixed is None:
            return draw_batch(self.design, self.graph, salts)
        return conditional_draw_batch(self.design, self.graph, salts, self.fixed)

    def _generate(self):
        done = 0
        while done < self.R:
            take = min(self.chunk, self.R - done)
            salts = replication_salts(self.salt, take, start=done)
            Z = self._draw(salts).astype(np.float64)
            yield Z, exposure_batch(self.graph, Z), take
            done += take

    def chunks(self):
        if self._cached is not None:
            return iter(self._cached)
        return self._generate()


def _mc_test_cached(stat, y_stat, stat_obs, R, cache: _DrawCache, metadata,
                    columns=None) -> TestResult:
    it = cache.chunks()

    def make_chunk(done):
        Z, T, take = next(it)
        if columns is not None:
            return Z[:, columns], T[:, columns], take
        return Z, T, take

    return _mc_test(stat, y_stat, stat_obs, R, make_chunk, metadata)


def test_composite_no_spillovers(y, z, design: Design, graph: Graph, tau_grid,
                                 statistic="score", R: int = 1000,
                                 salt: str = "test") -> TestResult:
    """Sup-p test of "no spillovers, some constant direct effect".

    Runs the sharp-null test at every tau0 on the grid (sharing one set of
    re-draws) and reports the largest p-value with the tau0 attaining it;
    rejecting means no constant direct effect explains the data.
    """
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=np.float64))
    if tau_grid.size == 0:
        raise ValueError("tau grid must be nonempty")
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    stat = get_statistic(statistic)
    t_obs = fraction_treated_peers(graph, zv).t
    cache = _DrawCache(design, graph, R, salt)

    best = None
    p_by_tau = []
    for tau0 in tau_grid:
        y_resid = yv - tau0 * zv
        stat_obs = stat.compute(y_resid, zv, t_obs)
        res = _mc_test_cached(stat, y_resid, stat_obs, R, cache, {})
        p_by_tau.append(res.p_value)
        if best is None or res.p_value > best[1].p_value:
            best = (float(tau0), res)
    tau_max, res = best
    metadata = {"test": "composite_no_spillovers",
                "design": design_description(design), "statistic": stat.name,
                "tau_max": tau_max, "tau_grid": [float(t) for t in tau_grid],
                "p_by_tau": p_by_tau, "salt": salt}
    return TestResult(res.stat_obs, res.p_value, R, res.null_quantiles,
                      res.degenerate, metadata)


def select_focal_units(graph: Graph, fraction: float = 0.5,
                       strategy: str = "random", salt: str = "focal",
                       nodes=None) -> FocalSet:
    """Pick the focal subset for conditional tests.

    "random" hash-ranks nodes and keeps the smallest ceil(fraction*n);
    "independent_set" greedily builds a maximal set with no two focal
    nodes adjacent (ascending node order) and truncates it to the budget,
    setting the warning flag when the budget is unattainable; "provided"
    validates an explicit node set.  Budgets are clamped so the focal set
    stays a strict subset.
    """
    n = graph.n
    if strategy == "provided":
        if nodes is None:
            raise ValueError("strategy 'provided' needs nodes")
        chosen = frozenset(int(v) for v in nodes)
        if not chosen or not all(0 <= v < n for v in chosen) or len(chosen) >= n:
            raise ValueError("provided focal set must be a nonempty strict subset")
        return FocalSet(chosen)
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be strictly between 0 and 1")
    budget = min(int(np.ceil(fraction * n)), n - 1)
    budget = max(budget, 1)
    if strategy == "random":
        ranks = sorted(range(n), key=lambda v: hash_uniform(salt, str(v)))
        return FocalSet(frozenset(ranks[:budget]))
    if strategy == "independent_set":
        taken: list[int] = []
        blocked = np.zeros(n, dtype=bool)
        for v in range(n):
            if not blocked[v]:
                taken.append(v)
                blocked[v] = True
                blocked[graph.neighbors(v)] = True
        if len(taken) > budget:
            return FocalSet(frozenset(taken[:budget]))
        if len(taken) == min(budget, n - 1):
            return FocalSet(frozenset(taken[:n - 1]))
        return FocalSet(frozenset(taken[:n - 1]), warning=True)
    raise ValueError(f"unknown strategy {strategy!r}")


def conditional_test_no_spillovers(y, z, design: Design, graph: Graph,
                                   focal: FocalSet, statistic="score",
                                   R: int = 1000, salt: str = "test") -> TestResult:
    """Test "no spillovers" allowing arbitrary heterogeneous direct effects.

    Focal units keep their observed treatment in every re-draw, so their
    direct-effect contributions cancel; the statistic sees only focal
    outcomes, the focal slice of the (fixed) treatment, and the focal
    exposures implied by each re-draw of everyone else.
    """
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    idx = focal.sorted()
    if idx.size == 0:
        raise ValueError("focal set is empty")
    if idx.size >= graph.n:
        raise ValueError("focal set must leave at least one non-focal node")
    if idx[0] < 0 or idx[-1] >= graph.n:
        raise ValueError("focal node outside the graph")
    fixed = {int(i): int(zv[i]) for i in idx}
    stat = get_statistic(statistic)
    y_f = yv[idx]
    t_obs = fraction_treated_peers(graph, zv).t
    stat_obs = stat.compute(y_f, zv[idx], t_obs[idx])
    cache = _DrawCache(design, graph, R, salt, conditional_fixed=fixed)
    metadata = {"test": "conditional_no_spillovers",
                "design": design_description(design), "statistic": stat.name,
                "focal_size": int(idx.size), "salt": salt}
    return _mc_test_cached(stat, y_f, stat_obs, R, cache, metadata, columns=idx)


def acceptance_region(y, z, design: Design, graph: Graph, tau_grid, rho_grid,
                      R: int = 1000, alpha: float = 0.05,
                      salt: str = "region") -> AcceptanceRegion:
    """Grid of sharp-null tests over joint direct (tau) and spillover (rho)
    effects; a cell is accepted when its p-value exceeds alpha.

    Cell (tau0, rho0) residualizes y - tau0*z - rho0*T(z) with the observed
    exposure T(z) and runs the shared-draw engine with the joint F
    statistic, which is scale-free across cells.
    """
    tau_grid = np.atleast_1d(np.asarray(tau_grid, dtype=np.float64))
    rho_grid = np.atleast_1d(np.asarray(rho_grid, dtype=np.float64))
    if tau_grid.size == 0 or rho_grid.size == 0:
        raise ValueError("grids must be nonempty")
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    stat = _REGISTRY["f"]
    t_obs = fraction_treated_peers(graph, zv).t
    cache = _DrawCache(design, graph, R, salt)
    p = np.empty((tau_grid.size, rho_grid.size))
    for i, tau0 in enumerate(tau_grid):
        for j, rho0 in enumerate(rho_grid):
            y_resid = yv - tau0 * zv - rho0 * t_obs
            stat_obs = stat.compute(y_resid, zv, t_obs)
            res = _mc_test_cached(stat, y_resid, stat_obs, R, cache, {})
            p[i, j] = res.p_value
    return AcceptanceRegion(tau_grid=tau_grid, rho_grid=rho_grid, p=p,
                            alpha=alpha, accepted=p > alpha, replications=R)


def test_influence_sharp_null(y, z, d, design: Design, graph: Graph,
                              tau0: float, theta0: float, statistic="score",
                              R: int = 1000, salt: str = "test") -> TestResult:
    """Test constant direct effect tau0 and social-influence effect theta0.

    The influence null says outcomes are y = tau0*z + theta0 * (fraction of
    adopting peers) + noise, with the encouragement z randomized and the
    behavior d observed.  Residualizing both terms leaves noise that should
    be exchangeable under re-draws of z; d is held fixed (not re-simulated)
    under re-randomization.
    """
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    dv = _as_float_vector(d, graph.n, "d")
    stat = get_statistic(statistic)
    m = fraction_adopting_peers(graph, dv).t
    y_resid = yv - tau0 * zv - theta0 * m
    metadata = {"test": "influence_sharp_null",
                "design": design_description(design), "statistic": stat.name,
                "tau0": float(tau0), "theta0": float(theta0), "salt": salt}
    return _algorithm1(y_resid, zv, design, graph, stat, R, salt, metadata)


# library entry points, not test cases, despite the names
test_sharp_null.__test__ = False
test_composite_no_spillovers.__test__ = False
test_influence_sharp_null.__test__ = False


def naive_permutation_test(y, z, graph: Graph, statistic="exposure",
                           R: int = 1000, salt: str = "test") -> TestResult:
    """Permutation test that ignores direct effects; an invalid baseline.

    Re-draws permute the observed treated count uniformly (complete
    randomization) and the outcome is never residualized, which is the
    textbook-but-wrong recipe whenever direct effects exist or the actual
    design was clustered.  Kept for calibration demonstrations.
    """
    if R < 1:
        raise ValueError("need at least one replication")
    yv = _as_float_vector(y, graph.n, "y")
    zv = _as_float_vector(z, graph.n, "z")
    stat = get_statistic(statistic)
    design = CompleteRandomization(int(round(zv.sum())))
    metadata = {"test": "naive_permutation", "design": design_description(design),
                "statistic": stat.name, "tau0": 0.0, "salt": salt}
    return _algorithm1(yv, zv, design, graph, stat, R, salt, metadata)
