"""Point estimators: the adversarial minimax estimator and the MLE,
simulated-method-of-moments, and indirect-inference baselines.

All outer minimizations run the deterministic Nelder-Mead simplex, optionally
seeded by a coordinate grid pre-scan.  Positive parameters are searched on a
log scale and correlations through atanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _sigmoid
from scipy.special import log_ndtr as _log_ndtr

from . import models
from .objective import EstimationContext, profiled_loss
from .optimize import grid_prescan, nelder_mead, to_internal, to_natural
from .randkit import LatentDraws, RngState

__all__ = [
    "OptimizerConfig",
    "EstimateReport",
    "adversarial_estimate",
    "mle_estimate",
    "smm_estimate",
    "ii_estimate",
    "location_poly_moments",
    "roy_moments",
    "fit_probit",
    "probit_mean_score",
    "jittered_starts",
    "roy_start_heuristic",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Outer optimizer settings shared by all estimators."""

    method: str = "nelder_mead"            # or grid_then_nelder_mead
    starts: tuple = ()                     # extra start points (natural scale)
    scale: float = 0.05
    ftol: float = 1e-8
    xtol: float = 1e-6
    max_evals: int = 2000
    grid: tuple = ()                       # per-coordinate pre-scan grids

    def __post_init__(self):
        if self.method not in ("nelder_mead", "grid_then_nelder_mead"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


@dataclass
class EstimateReport:
    theta: models.ParamVector
    criterion: float
    evaluations: int
    converged: bool
    method: str
    trace: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def trace_sound(self, tol: float = 1e-9) -> bool:
        """The reported optimum is no worse than any traced evaluation."""
        finite = [f for _, f in self.trace if np.isfinite(f)]
        return not finite or self.criterion <= min(finite) + tol


def _restarted_nm(wrapped, start_internal, scales, k, opt: OptimizerConfig):
    """Restart the simplex at the incumbent until it stops improving: a
    single Nelder-Mead run stalls early in higher dimensions."""
    x = start_internal
    res = None
    trace = []
    budget = opt.max_evals
    evals = 0
    while budget > 0:
        round_cap = min(budget, max(200 * k, 400))
        nxt = nelder_mead(wrapped, x, scale=opt.scale, ftol=opt.ftol,
                          xtol=opt.xtol, max_evals=round_cap)
        evals += nxt.evaluations
        budget -= nxt.evaluations
        trace.extend((to_natural(p, scales), fv) for p, fv in nxt.trace)
        improved = res is None or nxt.fun < res.fun - opt.ftol
        if res is None or nxt.fun < res.fun:
            res = nxt
            x = nxt.x
        if not improved:
            break
    return res, trace, evals


class _StartRunner:
    """Picklable per-start worker for parallel multi-start optimization."""

    def __init__(self, criterion, template, opt):
        self.criterion = criterion
        self.template = template
        self.opt = opt

    def __call__(self, start):
        scales = self.template.scales

        def wrapped(internal_x):
            nat = to_natural(internal_x, scales)
            if not self.template.in_bounds(nat):
                return np.inf
            return self.criterion(nat)

        return _restarted_nm(wrapped, to_internal(start, scales), scales,
                             self.template.k, self.opt)


def _minimize(criterion, template: models.ParamVector, starts,
              opt: OptimizerConfig, method_tag: str,
              jobs: int = 1) -> EstimateReport:
    """Shared driver: bounds guard, coordinate transforms, multi-start NM.

    Independent start points may run in parallel worker processes when the
    criterion is picklable."""
    scales = template.scales

    def wrapped(internal_x):
        nat = to_natural(internal_x, scales)
        if not template.in_bounds(nat):
            return np.inf
        return criterion(nat)

    seeded = [np.atleast_1d(np.asarray(s, dtype=float)) for s in starts]
    if not seeded:
        raise ValueError("need at least one start point")
    for s in seeded:
        if not template.in_bounds(s):
            raise ValueError("start point outside bounds")

    prescan_nodes = []
    if opt.method == "grid_then_nelder_mead" and opt.grid:
        best, fbest, nodes = grid_prescan(
            lambda nat: criterion(nat) if template.in_bounds(nat) else np.inf,
            [np.asarray(g, dtype=float) if g is not None else None
             for g in opt.grid],
            seeded[0])
        prescan_nodes = nodes
        seeded = [best] + seeded[1:]

    k = template.k
    best_res, best_start = None, None
    trace = []
    total_evals = 0
    if jobs > 1 and len(seeded) > 1:
        from concurrent.futures import ProcessPoolExecutor
        runner = _StartRunner(criterion, template, opt)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(runner, seeded))
    else:
        outcomes = [_restarted_nm(wrapped, to_internal(s, scales), scales, k,
                                  opt) for s in seeded]
    for s, (res, tr, evals) in zip(seeded, outcomes):
        total_evals += evals
        trace.extend(tr)
        if best_res is None or res.fun < best_res.fun:
            best_res, best_start = res, s
    theta_hat = to_natural(best_res.x, scales)
    flags = {}
    seed_value = criterion(best_start)
    if np.isfinite(seed_value) and best_res.fun > seed_value + 1e-12:
        flags["no_improvement_over_seed"] = True
    if prescan_nodes:
        flags["prescan_nodes"] = [(x.tolist(), fv) for x, fv in prescan_nodes]
        node_best = min(fv for _, fv in prescan_nodes)
        flags["beats_prescan"] = bool(best_res.fun <= node_best + 1e-9)
    return EstimateReport(theta=template.with_values(theta_hat),
                          criterion=best_res.fun,
                          evaluations=total_evals,
                          converged=best_res.converged,
                          method=method_tag, trace=trace, flags=flags)


# ---------------------------------------------------------------------------
# adversarial estimator


class _ProfiledCriterion:
    """Picklable profiled-loss criterion bound to one context."""

    def __init__(self, ctx: EstimationContext):
        self.ctx = ctx

    def __call__(self, nat):
        return profiled_loss(nat, self.ctx).value


def adversarial_estimate(ctx: EstimationContext, opt: OptimizerConfig,
                         starts=None, jobs: int = 1) -> EstimateReport:
    """Minimize the profiled cross-entropy loss over theta.  Independent
    start points may run in parallel worker processes."""
    starts = starts if starts is not None else [ctx.template.values]
    report = _minimize(_ProfiledCriterion(ctx), ctx.template, starts, opt,
                       "adversarial", jobs=jobs)
    report.flags["discriminator"] = ctx.disc.label
    return report


def jittered_starts(base: np.ndarray, state: RngState, count: int,
                    rel: float = 0.15) -> list[np.ndarray]:
    """Deterministic jittered start points around a base estimate."""
    base = np.atleast_1d(np.asarray(base, dtype=float))
    gen = state.generator()
    out = [base]
    for _ in range(count - 1):
        out.append(base + rel * (1.0 + np.abs(base)) * (gen.random(base.size) - 0.5))
    return out


# ---------------------------------------------------------------------------
# maximum likelihood


def mle_estimate(spec: models.GeneratorSpec, template: models.ParamVector,
                 data: models.Dataset, opt: OptimizerConfig | None = None,
                 start=None, closed_form: bool = True) -> EstimateReport:
    """Maximize the average log likelihood.

    Observations outside the support of P_theta make the criterion +inf
    (hard infeasibility); if no start yields a finite value the optimizer
    raises.  The normal location model uses its closed form (the sample
    mean) unless closed_form=False forces the iterative path.
    """
    opt = opt or OptimizerConfig()
    if spec.model == "normal_location" and closed_form:
        xbar = float(np.mean(data.column("x")))
        theta = template.with_values([xbar])
        crit = -float(np.mean(models.log_density(spec, theta, data.rows)))
        return EstimateReport(theta=theta, criterion=crit, evaluations=1,
                              converged=True, method="mle",
                              flags={"closed_form": True})
    infeasible = {"count": 0}

    def criterion(nat):
        theta = template.with_values(nat)
        ld = models.log_density(spec, theta, data.rows)
        if np.any(np.isneginf(ld)):
            infeasible["count"] += 1
            return np.inf
        return -float(np.mean(ld))

    if start is None:
        start = _default_start(spec, data, template)
    method = "mle" if spec.model != "normal_location" else "qmle"
    starts = [np.asarray(start, dtype=float)]
    if spec.model == "roy":
        # shrinking the experience premia toward zero equalizes the two
        # continuation values, which supports every observation; try these
        # neighbors when the requested start leaves the likelihood infinite
        for shrink in (0.5, 0.0):
            safe = np.asarray(start, dtype=float).copy()
            for g in ("gamma1", "gamma2"):
                if g in template.names:
                    safe[template.names.index(g)] *= shrink
            starts.append(safe)
    report = None
    for s in starts:
        try:
            report = _minimize(criterion, template, [s], opt, method)
            break
        except ValueError:
            continue
    if report is None:
        raise ValueError(
            "likelihood is infinite at every start and no feasible neighbor "
            "was found: the optimizer would wander the unsupported region")
    report.flags["infeasible_evaluations"] = infeasible["count"]
    return report


def _default_start(spec: models.GeneratorSpec, data: models.Dataset,
                   template: models.ParamVector):
    if spec.model in ("logistic_location", "normal_location"):
        return np.array([float(np.mean(data.column("x")))])
    if spec.model == "binary_choice":
        return np.array([1.0])
    return roy_start_heuristic(data, template)


def roy_start_heuristic(data: models.Dataset, template: models.ParamVector) -> np.ndarray:
    """Moment-based start for the Roy model, clipped into the feasible box."""
    lw1, d1 = data.column("log_w1"), data.column("d1")
    lw2, d2 = data.column("log_w2"), data.column("d2")
    s1 = d1 == 1.0
    mu1 = float(np.mean(lw1[s1])) if s1.any() else float(np.mean(lw1))
    mu2 = float(np.mean(lw1[~s1])) if (~s1).any() else float(np.mean(lw1))
    sd1 = float(np.std(lw1[s1])) if s1.sum() > 2 else float(np.std(lw1))
    sd2 = float(np.std(lw1[~s1])) if (~s1).sum() > 2 else float(np.std(lw1))
    g1 = float(np.mean(lw2[(d2 == 1.0) & s1])) - mu1 if ((d2 == 1.0) & s1).any() else 0.2
    g2 = float(np.mean(lw2[(d2 == 2.0) & ~s1])) - mu2 if ((d2 == 2.0) & ~s1).any() else 0.2
    vals = {"mu1": mu1, "mu2": mu2,
            "gamma1": float(np.clip(g1, -1.0, 1.5)),
            "gamma2": float(np.clip(g2, -1.0, 1.5)),
            "sigma1": float(np.clip(sd1, 0.4, 3.0)),
            "sigma2": float(np.clip(sd2, 0.4, 3.0)),
            "rho_t": 0.0, "rho_s": 0.3}
    return np.array([vals[n] for n in template.names])


# ---------------------------------------------------------------------------
# simulated method of moments


def location_poly_moments(degree: int):
    """x, x^2, ..., x^degree for the one-dimensional location models."""
    def fn(rows: np.ndarray) -> np.ndarray:
        x = rows[:, 0]
        return np.column_stack([x**k for k in range(1, degree + 1)])
    fn.k = degree
    fn.label = f"poly{degree}"
    return fn


def roy_moments():
    """log w1, d1, log w2, d2, (log w1)^2, (log w2)^2, log w1 * log w2."""
    def fn(rows: np.ndarray) -> np.ndarray:
        lw1, d1, lw2, d2 = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
        return np.column_stack([lw1, d1, lw2, d2, lw1**2, lw2**2, lw1 * lw2])
    fn.k = 7
    fn.label = "roy7"
    return fn


def _optimal_weight(moment_rows: np.ndarray, ridge: float = 1e-10):
    """Inverse sample covariance of the real-data moments, computed on the
    correlation scale for conditioning, with a tiny ridge."""
    c = np.cov(moment_rows, rowvar=False, ddof=1)
    c = np.atleast_2d(c)
    s = np.sqrt(np.clip(np.diag(c), 1e-300, None))
    corr = c / np.outer(s, s)
    try:
        inv = np.linalg.inv(corr + ridge * np.eye(corr.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ValueError("moment covariance is singular beyond the ridge") from exc
    return inv / np.outer(s, s)


def smm_estimate(moment_fn, data: models.Dataset, latent: LatentDraws,
                 spec: models.GeneratorSpec, template: models.ParamVector,
                 weighting: str = "optimal", opt: OptimizerConfig | None = None,
                 start=None, covariates: models.Dataset | None = None) -> EstimateReport:
    """Minimize (g_real - g_synth(theta))' W (g_real - g_synth(theta))."""
    opt = opt or OptimizerConfig()
    if moment_fn.k < template.k:
        raise ValueError("need at least as many moments as parameters")
    m_real = moment_fn(data.rows)
    g_real = m_real.mean(axis=0)
    if weighting == "optimal":
        W = _optimal_weight(m_real)
    elif weighting == "identity":
        W = np.eye(moment_fn.k)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    if spec.model == "binary_choice" and covariates is None:
        covariates = models.Dataset(rows=data.covariate_matrix(),
                                    columns=("x",), roles=("covariate",))

    def criterion(nat):
        synth = models.simulate(spec, template.with_values(nat), latent, covariates)
        gap = g_real - moment_fn(synth.rows).mean(axis=0)
        return float(gap @ W @ gap)

    if start is None:
        start = _default_start(spec, data, template)
    report = _minimize(criterion, template, [start], opt, "smm")
    report.flags["moments"] = getattr(moment_fn, "label", "custom")
    report.flags["weighting"] = weighting
    return report


# ---------------------------------------------------------------------------
# indirect inference with a polynomial probit score generator


def _poly_basis(x: np.ndarray, degree: int) -> np.ndarray:
    return np.column_stack([x**k for k in range(degree + 1)])


def fit_probit(y: np.ndarray, Z: np.ndarray, max_iter: int = 200,
               tol: float = 1e-8, ridge: float = 1e-9) -> np.ndarray:
    """Probit MLE by monotone damped Newton on an orthonormalized basis.

    High-degree polynomial bases overfit freely (huge fitted indexes at tail
    covariate values are legitimate); separation is declared only when the
    fit walks to an essentially perfect classification or diverges outright.
    """
    n, k = Z.shape
    q, r = np.linalg.qr(Z)
    q = q * np.sqrt(n)
    r = r / np.sqrt(n)

    def loglik_score(beta):
        idx = q @ beta
        ll = float(np.mean(y * _log_ndtr(idx) + (1.0 - y) * _log_ndtr(-idx)))
        lpdf = -0.5 * idx * idx - 0.5 * np.log(2.0 * np.pi)
        mills_p = np.exp(lpdf - _log_ndtr(idx))
        mills_m = np.exp(lpdf - _log_ndtr(-idx))
        g = q.T @ (y * mills_p - (1.0 - y) * mills_m) / n
        H = (q.T * (mills_p * mills_m)) @ q / n
        return ll, g, H, idx

    beta = np.zeros(k)
    ll, g, H, idx = loglik_score(beta)
    gnorm = float(np.max(np.abs(g)))
    stall = 0
    for _ in range(max_iter):
        if gnorm <= tol or stall >= 2:
            break
        step = np.linalg.solve(H + ridge * np.eye(k), g)
        scale, improved = 1.0, False
        for _ in range(40):
            cand = beta + scale * step
            cll, cg, cH, cidx = loglik_score(cand)
            if np.isfinite(cll) and cll >= ll:
                # flexible bases can carry quasi-separated escape directions
                # (the likelihood is monotone there); count non-improvement
                # at working precision as convergence, not failure
                stall = stall + 1 if cll - ll <= 1e-13 * max(1.0, abs(ll)) else 0
                beta, ll, g, H, idx = cand, cll, cg, cH, cidx
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
        gnorm = float(np.max(np.abs(g)))
    if np.all((2.0 * y - 1.0) * idx > 0.0):
        # every point classified correctly in-sample: the probit MLE sits at
        # infinity (monotone likelihood)
        raise ValueError(
            "probit separation: the auxiliary fit classifies perfectly "
            f"(loglik {ll:.3e}, max index {np.max(np.abs(idx)):.1f})")
    if gnorm > 1e-3:
        raise ValueError(
            f"probit fit did not converge (grad norm {gnorm:.2e})")
    return np.linalg.solve(r, beta)


def probit_mean_score(y: np.ndarray, Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """(1/len(y)) sum of y * phi/Phi * z - (1-y) * phi/(1-Phi) * z.

    Stable for extreme indexes; accepts fractional y from smoothed simulators.
    """
    idx = Z @ beta
    lpdf = -0.5 * idx * idx - 0.5 * np.log(2.0 * np.pi)
    mills_p = np.exp(lpdf - _log_ndtr(idx))
    mills_m = np.exp(lpdf - _log_ndtr(-idx))
    w = y * mills_p - (1.0 - y) * mills_m
    return Z.T @ w / len(y)


def ii_estimate(degree: int, data: models.Dataset, latent: LatentDraws,
                spec: models.GeneratorSpec, template: models.ParamVector,
                weighting: str = "optimal", opt: OptimizerConfig | None = None,
                start=None) -> EstimateReport:
    """Indirect inference on the binary-choice model: drive the auxiliary
    polynomial-probit score, evaluated at simulated data and the real-data
    fit, to zero in the chosen norm."""
    opt = opt or OptimizerConfig()
    if spec.model != "binary_choice":
        raise ValueError("the score generator is defined for binary_choice")
    y = data.column("y")
    x = data.column("x")
    Z = _poly_basis(x, degree)
    beta_hat = fit_probit(y, Z, ridge=1e-9)
    covariates = models.Dataset(rows=x[:, None], columns=("x",),
                                roles=("covariate",))
    if weighting == "optimal":
        idx = Z @ beta_hat
        lpdf = -0.5 * idx * idx - 0.5 * np.log(2.0 * np.pi)
        mills_p = np.exp(lpdf - _log_ndtr(idx))
        mills_m = np.exp(lpdf - _log_ndtr(-idx))
        rows_score = (y * mills_p - (1.0 - y) * mills_m)[:, None] * Z
        W = _optimal_weight(rows_score)
    elif weighting == "identity":
        W = np.eye(degree + 1)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")

    def criterion(nat):
        synth = models.simulate(spec, template.with_values(nat), latent, covariates)
        sbar = probit_mean_score(synth.column("y"), Z, beta_hat)
        return float(sbar @ W @ sbar)

    if start is None:
        start = _default_start(spec, data, template)
    report = _minimize(criterion, template, [start], opt, "ii")
    report.flags["degree"] = degree
    report.flags["weighting"] = weighting
    return report
