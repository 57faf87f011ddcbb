"""Generative oracle with known effects, plus calibration of the tests.

Outcomes follow a linear spillover model: y_i = (tau + h_i) z_i +
rho * T_i + u_i + xi_i, where T is the fraction of treated peers, h is
optional per-node direct-effect heterogeneity, u an optional confounder
shared along edges, and xi Normal noise.  The influence variant replaces
rho * T_i with theta times the fraction of adopting peers, with adoption d
generated by a logistic threshold in the encouragement z.

All randomness is counter-based: draw k for unit u under seed s hashes the
salt "sim#s.k" with unit u, so datasets are reproducible per unit, safe to
generate in any order, and two simulators given the same seed share their
noise (which makes d = z, theta = rho reduce exactly to the spillover
model).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.stats
from scipy.special import ndtri

from .errors import SimulationError
from .exposure import fraction_adopting_peers, fraction_treated_peers
from .hashing import uniforms
from .inference import (
    conditional_test_no_spillovers,
    naive_permutation_test,
    select_focal_units,
    test_composite_no_spillovers,
    test_influence_sharp_null,
    test_sharp_null,
)
from .netgraph import Graph
from .randomizer import Design, draw


@dataclass(frozen=True)
class SimParams:
    """Oracle parameters; all optional pieces default to off."""

    tau: float = 0.0
    rho: float = 0.0
    theta: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0
    noise_sd: float = 1.0
    tau_het_sd: float = 0.0
    confound_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_sd", "tau_het_sd", "confound_sd"):
            if getattr(self, name) < 0:
                raise SimulationError(f"{name} must be nonnegative")


def _stream_uniforms(seed: int, stream: str, units) -> np.ndarray:
    u = uniforms(f"sim#{seed}.{stream}", units)
    # keep inverse-CDF transforms finite
    return np.clip(u, 1e-15, 1 - 1e-15)


def _normals(seed: int, stream: str, units) -> np.ndarray:
    return ndtri(_stream_uniforms(seed, stream, units))


def _logistics(seed: int, stream: str, units) -> np.ndarray:
    u = _stream_uniforms(seed, stream, units)
    return np.log(u / (1.0 - u))


def _node_units(n: int) -> list[str]:
    return [str(i) for i in range(n)]


def _as_vector(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(getattr(x, "z", x), dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


def _noise_terms(graph: Graph, params: SimParams) -> np.ndarray:
    units = _node_units(graph.n)
    out = np.zeros(graph.n)
    if params.noise_sd > 0:
        out += params.noise_sd * _normals(params.seed, "xi", units)
    if params.confound_sd > 0:
        # latent factor smoothed over edges so connected nodes share it
        g = _normals(params.seed, "u", units)
        shared = (g + graph.row_normalized() @ g) / np.sqrt(2.0)
        out += params.confound_sd * shared
    return out


def _direct_effects(graph: Graph, params: SimParams) -> np.ndarray:
    if params.tau_het_sd > 0:
        het = _normals(params.seed, "het", _node_units(graph.n))
        return params.tau + params.tau_het_sd * het
    return np.full(graph.n, params.tau)


def simulate_outcomes(graph: Graph, z, params: SimParams) -> np.ndarray:
    """Spillover-model outcomes for one realized treatment vector."""
    zv = _as_vector(z, graph.n, "z")
    t = fraction_treated_peers(graph, zv).t
    return _direct_effects(graph, params) * zv + params.rho * t + _noise_terms(graph, params)


def simulate_influence_outcomes(graph: Graph, z, d, params: SimParams) -> np.ndarray:
    """Influence-model outcomes: peers act through adoption d, not z."""
    zv = _as_vector(z, graph.n, "z")
    dv = _as_vector(d, graph.n, "d")
    m = fraction_adopting_peers(graph, dv).t
    return _direct_effects(graph, params) * zv + params.theta * m + _noise_terms(graph, params)


def simulate_compliance(z, alpha: float, beta: float, seed: int) -> np.ndarray:
    """Adoption d_j = 1{alpha + beta z_j + eps_j > 0}, eps standard logistic."""
    zv = np.asarray(getattr(z, "z", z), dtype=np.float64)
    eps = _logistics(seed, "eps", _node_units(zv.shape[0]))
    return (alpha + beta * zv + eps > 0).astype(np.uint8)


def simulate_edge_compliance(graph: Graph, w, gamma: float, delta: float,
                             seed: int) -> Graph:
    """Subgraph of edges that materialize: 1{gamma + delta w_ij + nu > 0}."""
    wv = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if wv.shape != (graph.m,):
        raise ValueError(f"w has shape {wv.shape}, expected ({graph.m},)")
    units = [f"{s}-{d}" for s, d, _ in graph.edges]
    nu = _logistics(seed, "nu", units)
    keep = gamma + delta * wv + nu > 0
    edges = [e for e, k in zip(graph.edges, keep) if k]
    return Graph(graph.n, edges, directed=graph.directed,
                 covariates=graph.covariates, cluster_labels=graph.cluster_labels,
                 node_names=graph.node_names)


# ------------------------------------------------------------- calibration

_TEST_NAMES = {"sharp_null", "composite_no_spillovers", "conditional_no_spillovers",
               "influence_sharp_null", "naive_permutation"}


def _run_one(test_spec: dict, graph: Graph, design: Design, params: SimParams,
             model: str, sim_index: int, salt: str):
    name = test_spec["name"]
    z = draw(design, graph, f"{salt}#obs{sim_index}").z
    sim_params = replace(params, seed=params.seed + sim_index)
    test_salt = f"{salt}#t{sim_index}"
    R = int(test_spec.get("R", 500))
    statistic = test_spec.get("statistic", "score")

    if model == "influence":
        d = simulate_compliance(z, sim_params.alpha, sim_params.beta, sim_params.seed)
        y = simulate_influence_outcomes(graph, z, d, sim_params)
    else:
        d = None
        y = simulate_outcomes(graph, z, sim_params)

    if name == "sharp_null":
        return test_sharp_null(y, z, design, graph, tau0=float(test_spec["tau0"]),
                               statistic=statistic, R=R, salt=test_salt)
    if name == "composite_no_spillovers":
        return test_composite_no_spillovers(y, z, design, graph,
                                            tau_grid=test_spec["tau_grid"],
                                            statistic=statistic, R=R, salt=test_salt)
    if name == "conditional_no_spillovers":
        focal_cfg = test_spec.get("focal", {})
        focal = select_focal_units(
            graph,
            fraction=float(focal_cfg.get("fraction", 0.5)),
            strategy=focal_cfg.get("strategy", "random"),
            salt=f"{salt}#f{sim_index}",
        )
        return conditional_test_no_spillovers(y, z, design, graph, focal,
                                              statistic=statistic, R=R, salt=test_salt)
    if name == "influence_sharp_null":
        if d is None:
            d = simulate_compliance(z, sim_params.alpha, sim_params.beta, sim_params.seed)
        return test_influence_sharp_null(y, z, d, design, graph,
                                         tau0=float(test_spec["tau0"]),
                                         theta0=float(test_spec["theta0"]),
                                         statistic=statistic, R=R, salt=test_salt)
    if name == "naive_permutation":
        return naive_permutation_test(y, z, graph, statistic=statistic, R=R,
                                      salt=test_salt)
    raise SimulationError(f"unknown test {name!r}; have {sorted(_TEST_NAMES)}")


def calibrate(test_spec: dict, sim_spec: dict, n_sims: int = 1000,
              alpha: float = 0.05) -> dict:
    """Rejection rate of a test over fresh oracle datasets.

    test_spec: {"name": one of sharp_null | composite_no_spillovers |
    conditional_no_spillovers | influence_sharp_null | naive_permutation,
    "R": replications per test, "statistic": name, plus the test's
    parameters (tau0, theta0, tau_grid, focal)}.  sim_spec: {"graph":
    Graph, "design": Design, "params": SimParams, "model": "spillover" or
    "influence", "salt": master salt}.  Simulation s uses seed params.seed
    + s and deterministic per-sim salts, so results are reproducible and
    independent of execution order.
    """
    if n_sims < 100:
        raise SimulationError("calibration needs at least 100 simulations")
    if not isinstance(test_spec, dict) or test_spec.get("name") not in _TEST_NAMES:
        raise SimulationError(
            f"invalid test_spec; expected a dict with name in {sorted(_TEST_NAMES)}"
        )
    graph = sim_spec["graph"]
    design = sim_spec["design"]
    params = sim_spec["params"]
    model = sim_spec.get("model", "spillover")
    salt = sim_spec.get("salt", "cal")

    rejections = 0
    p_sum = 0.0
    for s in range(n_sims):
        res = _run_one(test_spec, graph, design, params, model, s, salt)
        rejections += res.p_value <= alpha
        p_sum += res.p_value
    ci = scipy.stats.binomtest(rejections, n_sims).proportion_ci(
        confidence_level=0.95, method="wilson"
    )
    return {
        "rejection_rate": rejections / n_sims,
        "ci_low": float(ci.low),
        "ci_high": float(ci.high),
        "mean_p": p_sum / n_sims,
        "n_sims": n_sims,
        "alpha": alpha,
    }


def power_curve(test_spec: dict, sim_spec: dict, effect_grid, n_sims: int = 1000,
                alpha: float = 0.05, effect_param: str = "rho") -> list[tuple]:
    """Rejection rate along a grid of true effect sizes.

    Every grid point reuses the same master salt and per-sim seeds (common
    random numbers), so the zero-effect entry equals a plain calibrate run
    and differences along the grid reflect the effect, not MC noise.
    """
    effects = list(effect_grid)
    if not effects:
        raise SimulationError("effect grid must be nonempty")
    out = []
    for effect in effects:
        params = replace(sim_spec["params"], **{effect_param: float(effect)})
        spec = dict(sim_spec, params=params)
        res = calibrate(test_spec, spec, n_sims=n_sims, alpha=alpha)
        out.append((float(effect), res["rejection_rate"]))
    return out
