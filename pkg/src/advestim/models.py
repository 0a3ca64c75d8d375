"""Structural models: deterministic simulators X_theta = T_theta(latent) and
tractable log-densities for the likelihood-based baselines.

Four models are built in:

``logistic_location``
    x = theta + e with e standard logistic.
``normal_location``
    x = theta + e with e standard normal (used as a deliberately wrong model
    for logistic data).
``binary_choice``
    y = 1{theta * x + e >= 0} given a covariate x; the latent noise law is
    selectable (logistic or normal) and the threshold may be smoothed.
``roy``
    Two-sector, two-period occupational choice with log-normal wages,
    selection on expected future wages, and an error covariance driven by a
    cross-sector correlation rho_s and a cross-period correlation rho_t.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _sigmoid
from scipy.special import log_ndtr as _log_ndtr
from scipy.stats import norm as _norm

from .randkit import (
    LatentDraws,
    RngState,
    cholesky_lower,
    draw_standard_logistic,
    draw_standard_normal,
    open_uniform,
    standard_logistic_quantile,
)

__all__ = [
    "ParamVector",
    "Dataset",
    "GeneratorSpec",
    "UnsupportedModelError",
    "latent_dim",
    "draw_latent",
    "draw_dataset",
    "simulate",
    "smooth_indicator",
    "roy_expected_period2",
    "log_density",
    "half_neg_loglik",
    "param_template",
]

NEG_INF = -np.inf

_MODEL_LATENT_DIM = {
    "logistic_location": 1,
    "normal_location": 1,
    "binary_choice": 1,
    "roy": 4,
}


class UnsupportedModelError(ValueError):
    """Raised when a likelihood or oracle is requested outside its closed-form range."""


def _softplus(t):
    return np.logaddexp(0.0, t)


# ---------------------------------------------------------------------------
# parameter vectors and datasets


@dataclass(frozen=True)
class ParamVector:
    """Named parameter vector with box bounds, fixed constants, and optimizer scales.

    ``scales`` marks how a coordinate is represented inside unconstrained
    optimizers: "linear", "log" (positive parameters), or "atanh"
    (correlations in (-1, 1)).
    """

    names: tuple[str, ...]
    values: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    fixed: dict = field(default_factory=dict)
    scales: tuple[str, ...] = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        k = values.size
        if len(self.names) != k:
            raise ValueError("names and values length mismatch")
        if len(set(self.names)) != k:
            raise ValueError("parameter names must be unique")
        lower = (np.full(k, -np.inf) if self.lower is None
                 else np.asarray(self.lower, dtype=float).copy())
        upper = (np.full(k, np.inf) if self.upper is None
                 else np.asarray(self.upper, dtype=float).copy())
        scales = self.scales if self.scales is not None else ("linear",) * k
        if len(scales) != k:
            raise ValueError("scales length mismatch")
        if np.any(values < lower) or np.any(values > upper):
            raise ValueError("parameter values violate bounds")
        for name in self.fixed:
            if name in self.names:
                raise ValueError(f"fixed constant {name!r} collides with a free parameter")
        for arr in (values, lower, upper):
            arr.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "scales", tuple(scales))

    @property
    def k(self) -> int:
        return self.values.size

    def __getitem__(self, name: str) -> float:
        if name in self.fixed:
            return float(self.fixed[name])
        return float(self.values[self.names.index(name)])

    def with_values(self, values) -> "ParamVector":
        return dataclasses.replace(self, values=np.asarray(values, dtype=float))

    def in_bounds(self, values=None) -> bool:
        v = self.values if values is None else np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))

    def as_dict(self) -> dict:
        d = {n: float(v) for n, v in zip(self.names, self.values)}
        d.update({n: float(v) for n, v in self.fixed.items()})
        return d


@dataclass(frozen=True)
class Dataset:
    """n-by-d observation matrix with per-column roles (outcome or covariate)."""

    rows: np.ndarray
    columns: tuple[str, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float)).copy()
        if rows.shape[0] < 1:
            raise ValueError("dataset must have at least one row")
        if rows.shape[1] != len(self.columns) or len(self.columns) != len(self.roles):
            raise ValueError("columns/roles do not match the row width")
        if any(r not in ("outcome", "covariate") for r in self.roles):
            raise ValueError("roles must be 'outcome' or 'covariate'")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "roles", tuple(self.roles))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def covariate_matrix(self) -> np.ndarray:
        idx = [i for i, r in enumerate(self.roles) if r == "covariate"]
        return self.rows[:, idx]


@dataclass(frozen=True)
class GeneratorSpec:
    """Configuration of one structural model.

    ``noise`` selects the binary-choice latent law ("logistic" or "normal");
    ``smoothing_h`` > 0 replaces the binary threshold by a logistic kernel;
    ``roy_integration`` computes the agent's expected-maximum wage either by
    the exact two-term normal-CDF formula ("exact") or by a tensor
    Gauss-Hermite rule ("quadrature") with ``roy_nodes`` per dimension;
    ``roy_conditional`` makes agents condition period-2 wage expectations on
    their period-1 shocks whenever rho_t != 0.
    """

    model: str
    noise: str = "logistic"
    smoothing_h: float = 0.0
    roy_integration: str = "exact"
    roy_nodes: int = 32
    roy_conditional: bool = True

    def __post_init__(self):
        if self.model not in _MODEL_LATENT_DIM:
            raise ValueError(f"unknown model {self.model!r}")
        if self.noise not in ("logistic", "normal"):
            raise ValueError(f"unknown noise law {self.noise!r}")
        if not np.isfinite(self.smoothing_h) or self.smoothing_h < 0:
            raise ValueError("smoothing bandwidth must be finite and >= 0")
        if self.roy_integration not in ("exact", "quadrature"):
            raise ValueError("roy integration must be 'exact' or 'quadrature'")
        if self.roy_nodes < 2:
            raise ValueError("roy quadrature needs at least 2 nodes per dimension")


def latent_dim(spec: GeneratorSpec) -> int:
    return _MODEL_LATENT_DIM[spec.model]


def param_template(model: str, values=None) -> ParamVector:
    """Canonical ParamVector for each model, holding bounds and fixed constants."""
    if model in ("logistic_location", "normal_location", "binary_choice"):
        v = [0.0] if values is None else values
        return ParamVector(("theta",), v)
    if model == "roy":
        v = [1.8, 2.0, 0.5, 0.0, 1.0, 1.0, 0.5] if values is None else values
        names7 = ("mu1", "mu2", "gamma1", "gamma2", "sigma1", "sigma2", "rho_s")
        names8 = names7[:6] + ("rho_t", "rho_s")
        if len(v) == 7:
            return ParamVector(
                names7, v,
                lower=[-np.inf] * 4 + [0.0, 0.0, -1.0],
                upper=[np.inf] * 4 + [np.inf, np.inf, 1.0],
                fixed={"beta": 0.9, "rho_t": 0.0},
                scales=("linear",) * 4 + ("log", "log", "atanh"),
            )
        if len(v) == 8:
            return ParamVector(
                names8, v,
                lower=[-np.inf] * 4 + [0.0, 0.0, -1.0, -1.0],
                upper=[np.inf] * 4 + [np.inf, np.inf, 1.0, 1.0],
                fixed={"beta": 0.9},
                scales=("linear",) * 4 + ("log", "log", "atanh", "atanh"),
            )
        raise ValueError("roy takes 7 or 8 free parameters")
    raise ValueError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# latent draws and real-data generation


def draw_latent(spec: GeneratorSpec, state: RngState, m: int) -> LatentDraws:
    """Draw the model's latent shocks once; they are reused for every theta."""
    if m < 1:
        raise ValueError("need m >= 1 latent draws")
    if spec.model == "logistic_location":
        mat = draw_standard_logistic(state, m)[:, None]
    elif spec.model == "normal_location":
        mat = draw_standard_normal(state, (m, 1))
    elif spec.model == "binary_choice":
        if spec.noise == "logistic":
            mat = draw_standard_logistic(state, m)[:, None]
        else:
            mat = draw_standard_normal(state, (m, 1))
    else:  # roy: standard normal quartet, rotated by the theta Cholesky later
        mat = draw_standard_normal(state, (m, 4))
    return LatentDraws(matrix=mat, origin=state)


def draw_covariates(state: RngState, n: int) -> Dataset:
    """Covariates for the binary-choice designs: x ~ N(1, 1)."""
    x = 1.0 + draw_standard_normal(state, (n, 1))
    return Dataset(rows=x, columns=("x",), roles=("covariate",))


def draw_dataset(spec: GeneratorSpec, theta: ParamVector, state: RngState, n: int,
                 covariates: Dataset | None = None) -> Dataset:
    """Draw n observations from the model's own law (used for real-data truths)."""
    if spec.model == "binary_choice" and covariates is None:
        covariates = draw_covariates(state.child("covariates"), n)
    latent = draw_latent(spec, state.child("shocks"), n)
    return simulate(spec, theta, latent, covariates)


# ---------------------------------------------------------------------------
# simulators


def smooth_indicator(t, h: float):
    """Logistic relaxation of 1{t >= 0} with bandwidth h > 0."""
    if h <= 0:
        raise ValueError("smooth_indicator needs h > 0; use the hard indicator otherwise")
    return _sigmoid(np.asarray(t, dtype=float) / h)


def simulate(spec: GeneratorSpec, theta: ParamVector, latent: LatentDraws,
             covariates: Dataset | None = None) -> Dataset:
    """Deterministic map from (theta, latent draws, covariates) to a synthetic dataset."""
    if latent.q != latent_dim(spec):
        raise ValueError(
            f"latent dimension {latent.q} does not match model {spec.model!r}"
        )
    if not theta.in_bounds():
        raise ValueError("theta outside bounds")
    if spec.model in ("logistic_location", "normal_location"):
        if covariates is not None:
            raise ValueError("location models take no covariates")
        x = theta["theta"] + latent.matrix[:, 0]
        return Dataset(rows=x[:, None], columns=("x",), roles=("outcome",))
    if spec.model == "binary_choice":
        if covariates is None:
            raise ValueError("binary_choice requires recycled covariates")
        x = covariates.column("x")
        if x.size != latent.m:
            raise ValueError("binary_choice recycles covariates, so m must equal n")
        index = theta["theta"] * x + latent.matrix[:, 0]
        if spec.smoothing_h > 0:
            y = smooth_indicator(index, spec.smoothing_h)
        else:
            y = (index >= 0.0).astype(float)
        return Dataset(rows=np.column_stack([y, x]), columns=("y", "x"),
                       roles=("outcome", "covariate"))
    return _simulate_roy(spec, theta, latent)


def _roy_params(theta: ParamVector) -> dict:
    p = theta.as_dict()
    for req in ("mu1", "mu2", "gamma1", "gamma2", "sigma1", "sigma2", "rho_s",
                "rho_t", "beta"):
        if req not in p:
            raise ValueError(f"roy parameter {req!r} missing")
    if abs(p["rho_s"]) >= 1 or abs(p["rho_t"]) >= 1:
        raise ValueError("correlations must lie strictly inside (-1, 1)")
    return p


def _roy_cov(p: dict) -> np.ndarray:
    s1, s2, rs, rt = p["sigma1"], p["sigma2"], p["rho_s"], p["rho_t"]
    a = np.array([[s1 * s1, rs * s1 * s2], [rs * s1 * s2, s2 * s2]])
    return np.block([[a, rt * a], [rt * a, a]])


_GH_CACHE: dict = {}


def _gh_rule(nodes: int):
    if nodes not in _GH_CACHE:
        x, w = np.polynomial.hermite.hermgauss(nodes)
        z1, z2 = np.meshgrid(x, x, indexing="ij")
        pts = np.stack([z1.ravel(), z2.ravel()], axis=1) * np.sqrt(2.0)
        wts = np.outer(w, w).ravel() / np.pi
        _GH_CACHE[nodes] = (pts, wts)
    return _GH_CACHE[nodes]


def _expect_max_lognormal_gh(mean1, mean2, cov2: np.ndarray, nodes: int):
    """E[max(exp(U), exp(V))] for (U, V) ~ N((mean1, mean2), cov2), vectorized
    over paired mean arrays, by a tensor Gauss-Hermite rule after Cholesky
    rotation of the covariance."""
    pts, wts = _gh_rule(nodes)
    L = cholesky_lower(cov2)
    rot = pts @ L.T                                    # (nodes^2, 2)
    m1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    u = m1[:, None] + rot[None, :, 0]
    v = m2[:, None] + rot[None, :, 1]
    # max(e^u, e^v) = exp(max(u, v)); one exp saves half the transcendentals
    vals = np.exp(np.maximum(u, v)) @ wts
    return vals


def _expect_max_lognormal_exact(mean1, mean2, cov2: np.ndarray):
    """Exact expectation of the max of two correlated lognormals:

        E[max(e^U, e^V)] = e^(a + s1^2/2) Phi((a - b + s1^2 - c) / w)
                         + e^(b + s2^2/2) Phi((b - a + s2^2 - c) / w),

    w^2 = Var(U - V); degenerate w means the larger-mean leg always wins.
    """
    m1 = np.atleast_1d(np.asarray(mean1, dtype=float))
    m2 = np.atleast_1d(np.asarray(mean2, dtype=float))
    v1, v2, c = cov2[0, 0], cov2[1, 1], cov2[0, 1]
    w2 = v1 + v2 - 2.0 * c
    e1 = np.exp(m1 + 0.5 * v1)
    e2 = np.exp(m2 + 0.5 * v2)
    if w2 <= 1e-300:
        return np.where(m1 + 0.5 * v1 >= m2 + 0.5 * v2, e1, e2)
    w = np.sqrt(w2)
    p1 = np.exp(_log_ndtr((m1 - m2 + v1 - c) / w))
    p2 = np.exp(_log_ndtr((m2 - m1 + v2 - c) / w))
    return e1 * p1 + e2 * p2


def _expect_max_lognormal(mean1, mean2, cov2: np.ndarray, nodes: int,
                          method: str = "exact"):
    if method == "exact":
        return _expect_max_lognormal_exact(mean1, mean2, cov2)
    return _expect_max_lognormal_gh(mean1, mean2, cov2, nodes)


def roy_expected_period2(theta: ParamVector, sector: int,
                         period1_shocks: np.ndarray | None = None,
                         nodes: int = 32, conditional: bool = True,
                         method: str = "exact"):
    """Agent's expected period-2 wage E[max_s w_2s | d_1 = sector(, shocks)].

    With rho_t = 0 (or ``conditional=False``) the expectation is a scalar;
    otherwise it conditions on the period-1 shock pair(s) supplied.
    ``method`` selects the exact two-term normal-CDF formula or the tensor
    Gauss-Hermite rule (the two agree to the quadrature's discretization
    error; the exact route is the production default).
    """
    p = _roy_params(theta)
    if sector not in (1, 2):
        raise ValueError("sector must be 1 or 2")
    a1 = p["mu1"] + p["gamma1"] * (sector == 1)
    a2 = p["mu2"] + p["gamma2"] * (sector == 2)
    s1, s2, rs, rt = p["sigma1"], p["sigma2"], p["rho_s"], p["rho_t"]
    base = np.array([[s1 * s1, rs * s1 * s2], [rs * s1 * s2, s2 * s2]])
    use_cond = conditional and rt != 0.0
    if use_cond:
        if period1_shocks is None:
            raise ValueError("period-1 shocks are required when rho_t != 0")
        eps = np.atleast_2d(np.asarray(period1_shocks, dtype=float))
        m1 = a1 + rt * eps[:, 0]
        m2 = a2 + rt * eps[:, 1]
        cov = (1.0 - rt * rt) * base
    else:
        m1, m2 = np.array([a1]), np.array([a2])
        cov = base
    if s1 == 0.0 and s2 == 0.0:
        out = np.maximum(np.exp(m1), np.exp(m2))
    else:
        out = _expect_max_lognormal(m1, m2, cov, nodes, method=method)
    if out.size == 1 and (period1_shocks is None
                          or np.asarray(period1_shocks).ndim == 1):
        return float(out[0])
    return out


def _roy_continuation_values(spec: GeneratorSpec, theta: ParamVector,
                             eps1: np.ndarray | None):
    """beta * E[w_2 | d_1 = s] for s = 1, 2; vectors when conditioning applies."""
    p = _roy_params(theta)
    rt = p["rho_t"]
    cond = spec.roy_conditional and rt != 0.0
    shocks = eps1 if cond else None
    v1 = p["beta"] * roy_expected_period2(theta, 1, shocks, spec.roy_nodes,
                                          cond, method=spec.roy_integration)
    v2 = p["beta"] * roy_expected_period2(theta, 2, shocks, spec.roy_nodes,
                                          cond, method=spec.roy_integration)
    return np.asarray(v1, dtype=float), np.asarray(v2, dtype=float)


def _simulate_roy(spec: GeneratorSpec, theta: ParamVector, latent: LatentDraws) -> Dataset:
    p = _roy_params(theta)
    L = cholesky_lower(_roy_cov(p))
    eps = latent.matrix @ L.T                          # columns: e11, e12, e21, e22
    v1, v2 = _roy_continuation_values(spec, theta, eps[:, :2])
    w11 = np.exp(p["mu1"] + eps[:, 0])
    w12 = np.exp(p["mu2"] + eps[:, 1])
    d1 = np.where(w11 + v1 >= w12 + v2, 1.0, 2.0)      # ties go to sector 1
    lw1 = np.where(d1 == 1.0, p["mu1"] + eps[:, 0], p["mu2"] + eps[:, 1])
    lw21 = p["mu1"] + p["gamma1"] * (d1 == 1.0) + eps[:, 2]
    lw22 = p["mu2"] + p["gamma2"] * (d1 == 2.0) + eps[:, 3]
    d2 = np.where(lw21 >= lw22, 1.0, 2.0)
    lw2 = np.where(d2 == 1.0, lw21, lw22)
    rows = np.column_stack([lw1, d1, lw2, d2])
    return Dataset(rows=rows, columns=("log_w1", "d1", "log_w2", "d2"),
                   roles=("outcome",) * 4)


# ---------------------------------------------------------------------------
# log densities


def log_density(spec: GeneratorSpec, theta: ParamVector, rows) -> np.ndarray:
    """Pointwise log p_theta; -inf marks observations outside the support of
    P_theta (an explicit flag, never NaN).  Raises UnsupportedModelError for
    configurations without a closed-form likelihood (roy with rho_t != 0)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if spec.model == "logistic_location":
        z = rows[:, 0] - theta["theta"]
        return -z - 2.0 * _softplus(-z)
    if spec.model == "normal_location":
        z = rows[:, 0] - theta["theta"]
        return -0.5 * np.log(2.0 * np.pi) - 0.5 * z * z
    if spec.model == "binary_choice":
        y, x = rows[:, 0], rows[:, 1]
        index = theta["theta"] * x
        if spec.noise == "logistic":
            lp1, lp0 = -_softplus(-index), -_softplus(index)
        else:
            lp1, lp0 = _log_ndtr(index), _log_ndtr(-index)
        return y * lp1 + (1.0 - y) * lp0
    return _roy_log_density(spec, theta, rows)


def _roy_log_density(spec: GeneratorSpec, theta: ParamVector, rows: np.ndarray) -> np.ndarray:
    p = _roy_params(theta)
    if p["rho_t"] != 0.0:
        raise UnsupportedModelError(
            "roy has no closed-form likelihood when rho_t != 0"
        )
    s1, s2, rs = p["sigma1"], p["sigma2"], p["rho_s"]
    if s1 <= 0 or s2 <= 0 or abs(rs) >= 1:
        raise ValueError("roy likelihood needs sigma > 0 and |rho_s| < 1")
    v1, v2 = _roy_continuation_values(spec, theta, None)
    v1, v2 = float(v1), float(v2)
    lw1, d1, lw2, d2 = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
    csd = s2 * np.sqrt(1.0 - rs * rs)
    csd1 = s1 * np.sqrt(1.0 - rs * rs)

    out = np.zeros(rows.shape[0])
    # period 1: observed wage density times the probability the other sector
    # (plus its continuation value) loses, conditional on the observed wage
    pick1 = d1 == 1.0
    cut = np.where(pick1, np.exp(lw1) + v1 - v2, np.exp(lw1) + v2 - v1)
    supported = cut > 0.0
    logcut = np.log(np.where(supported, cut, 1.0))
    own_m = np.where(pick1, p["mu1"], p["mu2"])
    own_s = np.where(pick1, s1, s2)
    oth_mean = np.where(
        pick1,
        p["mu2"] + rs * s2 / s1 * (lw1 - p["mu1"]),
        p["mu1"] + rs * s1 / s2 * (lw1 - p["mu2"]),
    )
    oth_sd = np.where(pick1, csd, csd1)
    lp1 = (_norm.logpdf(lw1, loc=own_m, scale=own_s)
           + _log_ndtr((logcut - oth_mean) / oth_sd))
    out += np.where(supported, lp1, NEG_INF)

    # period 2: experience premium applies to the sector chosen in period 1
    m21 = p["mu1"] + p["gamma1"] * pick1
    m22 = p["mu2"] + p["gamma2"] * (~pick1)
    pick2 = d2 == 1.0
    own_m2 = np.where(pick2, m21, m22)
    own_s2 = np.where(pick2, s1, s2)
    oth_mean2 = np.where(
        pick2,
        m22 + rs * s2 / s1 * (lw2 - m21),
        m21 + rs * s1 / s2 * (lw2 - m22),
    )
    oth_sd2 = np.where(pick2, csd, csd1)
    out += (_norm.logpdf(lw2, loc=own_m2, scale=own_s2)
            + _log_ndtr((lw2 - oth_mean2) / oth_sd2))
    return out


def half_neg_loglik(spec: GeneratorSpec, theta: ParamVector, data: Dataset) -> float:
    """Half the negative average log likelihood; +inf when any observation is
    outside the support of P_theta."""
    ld = log_density(spec, theta, data.rows)
    if np.any(np.isneginf(ld)):
        return np.inf
    return float(-0.5 * np.mean(ld))
