"""Inference and diagnostics: bootstrap standard errors, loss-surface scans,
curvature fits, misspecification diagnostics, asymptotic-variance formulas,
and the Monte Carlo replication harness.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import expit as _sigmoid
from scipy.special import log_ndtr as _log_ndtr

from . import models
from .objective import EstimationContext, profiled_loss
from .randkit import LatentDraws, RngState, resample_rows

__all__ = [
    "LossSurface",
    "McSummary",
    "MisspecDiagnostics",
    "resample_latent",
    "bootstrap_se",
    "surface_scan",
    "curvature_fit",
    "misspec_diagnostics",
    "asymptotic_variance",
    "monte_carlo",
    "orthogonality_gap",
    "js_pseudo_true",
]

_QUAD_LIMIT = 400
_QUAD_TOL = 1e-10


def _softplus(t):
    return np.logaddexp(0.0, t)


def _integrate(f, lo=-40.0, hi=40.0):
    v, _ = quad(f, lo, hi, limit=_QUAD_LIMIT, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL)
    return v


# ---------------------------------------------------------------------------
# bootstrap


def resample_latent(state: RngState, latent: LatentDraws) -> LatentDraws:
    idx = state.generator().integers(0, latent.m, size=latent.m)
    return LatentDraws(matrix=latent.matrix[idx].copy(), origin=state)


def _bootstrap_one(b, real, latent, estimate_fn, state):
    sb = state.child(("boot", b))
    real_b = resample_rows(sb.child("data"), real)
    latent_b = resample_latent(sb.child("latent"), latent)
    return estimate_fn(real_b, latent_b, sb.child("estimate"))


def bootstrap_se(real: models.Dataset, latent: LatentDraws, estimate_fn,
                 B: int, state: RngState, jobs: int = 1,
                 max_fail_frac: float = 0.2):
    """B re-estimations on with-replacement resamples of both the data and
    the latent draws; the discriminator specification stays frozen inside
    ``estimate_fn``.  Returns (draws, se, failures)."""
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    draws, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_bootstrap_one, b, real, latent, estimate_fn,
                                state) for b in range(B)]
            for b, fut in enumerate(futs):
                try:
                    draws.append(np.atleast_1d(fut.result()))
                except Exception as exc:     # noqa: BLE001 -- logged, capped below
                    failures.append((b, repr(exc)))
    else:
        for b in range(B):
            try:
                draws.append(np.atleast_1d(_bootstrap_one(
                    b, real, latent, estimate_fn, state)))
            except Exception as exc:         # noqa: BLE001
                failures.append((b, repr(exc)))
    if len(failures) > max_fail_frac * B:
        raise RuntimeError(
            f"{len(failures)} of {B} bootstrap replications failed: "
            f"{failures[:5]}")
    arr = np.vstack(draws)
    se = arr.std(axis=0, ddof=1)
    return arr, se, failures


# ---------------------------------------------------------------------------
# loss surfaces and curvature


@dataclass
class LossSurface:
    """Profiled loss along one coordinate, with optional oracle-loss and
    half-negative-log-likelihood series (+inf marks unsupported theta)."""

    coordinate: str
    grid: np.ndarray
    profiled: np.ndarray
    oracle: np.ndarray | None
    loglik: np.ndarray | None
    fixed_at: dict
    supported: np.ndarray = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.supported is None and self.loglik is not None:
            self.supported = np.isfinite(self.loglik)

    def series(self) -> dict:
        out = {"profiled": self.profiled}
        if self.oracle is not None:
            out["oracle"] = self.oracle
        if self.loglik is not None:
            out["loglik"] = self.loglik
        return out


def surface_scan(ctx: EstimationContext, coordinate: str, grid,
                 oracle_ctx: EstimationContext | None = None,
                 include_loglik: bool = True) -> LossSurface:
    """Scan the profiled loss along one coordinate, others held at the
    context template values (record them in the output)."""
    grid = np.asarray(grid, dtype=float)
    names = ctx.template.names
    ci = names.index(coordinate)
    base = ctx.template.values.copy()
    prof = np.empty(grid.size)
    orc = np.empty(grid.size) if oracle_ctx is not None else None
    ll = np.empty(grid.size) if include_loglik else None
    for j, g in enumerate(grid):
        vec = base.copy()
        vec[ci] = g
        prof[j] = profiled_loss(vec, ctx).value
        if orc is not None:
            orc[j] = profiled_loss(vec, oracle_ctx).value
        if ll is not None:
            theta = ctx.template.with_values(vec)
            try:
                ll[j] = models.half_neg_loglik(ctx.model, theta, ctx.real)
            except models.UnsupportedModelError:
                ll = None
    return LossSurface(coordinate=coordinate, grid=grid, profiled=prof,
                       oracle=orc, loglik=ll,
                       fixed_at=dict(zip(names, base)))


def curvature_fit(surface: LossSurface) -> dict:
    """Least-squares quadratic coefficients per series after demeaning.

    Levels are ignored by construction; pairwise ratios are reported, and a
    non-convex (negative-coefficient) fit is flagged rather than an error.
    """
    if surface.grid.size < 7:
        raise ValueError("need at least 7 grid points for a curvature fit")
    t = surface.grid - surface.grid.mean()
    design = np.column_stack([np.ones_like(t), t, t * t])
    coefs, flags = {}, {}
    for name, vals in surface.series().items():
        mask = np.isfinite(vals)
        if mask.sum() < 7:
            coefs[name] = np.nan
            flags[name] = "insufficient finite points"
            continue
        y = vals[mask] - np.mean(vals[mask])
        beta, *_ = np.linalg.lstsq(design[mask], y, rcond=None)
        coefs[name] = float(beta[2])
        if beta[2] <= 0:
            flags[name] = "non-convex fit"
        interior = np.argmin(vals[mask])
        if interior in (0, mask.sum() - 1):
            flags.setdefault(name, "minimum at grid edge")
    ratios = {}
    for a in coefs:
        for b in coefs:
            if a < b and np.isfinite(coefs[a]) and np.isfinite(coefs[b]) and coefs[b] != 0:
                ratios[f"{a}/{b}"] = coefs[a] / coefs[b]
    return {"coefficients": coefs, "ratios": ratios, "flags": flags}


# ---------------------------------------------------------------------------
# analytic experiment profiles (closed-form densities and scores)


class _NormalMisspecProfile:
    """Normal location model fitted to standard-logistic data; theta0 = 0."""

    id = "normal_misspec"
    theta0 = 0.0
    kind = "continuous"

    @staticmethod
    def l0(x):
        return -x - 2.0 * _softplus(-x)

    @staticmethod
    def ltheta(x, theta):
        return -0.5 * np.log(2.0 * np.pi) - 0.5 * (x - theta) ** 2

    @staticmethod
    def score(x, theta):
        return x - theta

    @staticmethod
    def hess(x, theta):
        return -np.ones_like(np.asarray(x, dtype=float))

    @staticmethod
    def dlog_model_dx(x, theta):
        return -(x - theta)

    @staticmethod
    def dlog_real_dx(x):
        return 1.0 - 2.0 * _sigmoid(x)

    # latent law equals the model law at theta0 (T_theta(e) = theta + e, e ~ N(0,1))
    @staticmethod
    def draw_latent(state, m):
        return state.generator().standard_normal(m)

    @staticmethod
    def latent_logpdf(e):
        return -0.5 * np.log(2.0 * np.pi) - 0.5 * e * e

    @staticmethod
    def push(theta, e):
        return theta + e


class _LogisticLocationProfile:
    """Correctly specified logistic location model; theta0 = 0."""

    id = "logistic_location"
    theta0 = 0.0
    kind = "continuous"

    @staticmethod
    def l0(x):
        return -x - 2.0 * _softplus(-x)

    ltheta = staticmethod(lambda x, theta: -(x - theta) - 2.0 * _softplus(-(x - theta)))

    @staticmethod
    def score(x, theta):
        return 2.0 * _sigmoid(x - theta) - 1.0

    @staticmethod
    def hess(x, theta):
        lam = _sigmoid(x - theta)
        return -2.0 * lam * (1.0 - lam)

    @staticmethod
    def dlog_model_dx(x, theta):
        return 1.0 - 2.0 * _sigmoid(x - theta)

    @staticmethod
    def dlog_real_dx(x):
        return 1.0 - 2.0 * _sigmoid(x)

    @staticmethod
    def draw_latent(state, m):
        from .randkit import draw_standard_logistic
        return draw_standard_logistic(state, m)

    @staticmethod
    def latent_logpdf(e):
        return -e - 2.0 * _softplus(-e)

    @staticmethod
    def push(theta, e):
        return theta + e


class _BinaryMisspecProfile:
    """Logit model fitted to probit data with x ~ N(1,1); theta0 is the
    Jensen-Shannon projection (computed numerically once)."""

    id = "binary_misspec"
    kind = "binary"
    _theta0_cache = None

    @classmethod
    def theta0(cls):
        if cls._theta0_cache is None:
            cls._theta0_cache = js_pseudo_true()
        return cls._theta0_cache

    @staticmethod
    def cond_real(x):
        """log p0(y=1|x), log p0(y=0|x)."""
        return _log_ndtr(x), _log_ndtr(-x)

    @staticmethod
    def cond_model(x, theta):
        return -_softplus(-theta * x), -_softplus(theta * x)

    @staticmethod
    def score(y, x, theta):
        return x * (y - _sigmoid(theta * x))

    @staticmethod
    def hess(y, x, theta):
        lam = _sigmoid(theta * x)
        return -x * x * lam * (1.0 - lam)

    @staticmethod
    def x_pdf(x):
        return np.exp(-0.5 * (x - 1.0) ** 2) / np.sqrt(2.0 * np.pi)


_PROFILES = {
    "logistic_location": _LogisticLocationProfile,
    "normal_misspec": _NormalMisspecProfile,
    "binary_misspec": _BinaryMisspecProfile,
}


def js_pseudo_true(lo: float = 0.5, hi: float = 3.5, tol: float = 1e-10) -> float:
    """Jensen-Shannon projection of the probit truth onto the logit model,
    by golden-section search over a quadrature-evaluated population loss."""
    p = _BinaryMisspecProfile

    def pop_loss(theta):
        def integrand(x):
            lr1, lr0 = p.cond_real(x)
            lm1, lm0 = p.cond_model(x, theta)
            val = 0.0
            for lr, lm in ((lr1, lm1), (lr0, lm0)):
                d = lr - lm
                # p0 log D + ptheta log(1-D), D = sigmoid(lr - lm)
                val += np.exp(lr) * (-_softplus(-d)) + np.exp(lm) * (-_softplus(d))
            return val * p.x_pdf(x)
        return _integrate(integrand, -12.0, 14.0)

    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = pop_loss(c), pop_loss(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = pop_loss(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = pop_loss(d)
    return 0.5 * (a + b)


def kl_pseudo_true(lo: float = 0.5, hi: float = 3.5, tol: float = 1e-10) -> float:
    """Kullback-Leibler projection (the quasi-MLE target) for the same pair."""
    p = _BinaryMisspecProfile

    def neg_ll(theta):
        def integrand(x):
            lr1, _ = p.cond_real(x)
            lm1, lm0 = p.cond_model(x, theta)
            p1 = np.exp(lr1)
            return (p1 * lm1 + (1.0 - p1) * lm0) * p.x_pdf(x)
        return -_integrate(integrand, -12.0, 14.0)

    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - phi * (b - a), a + phi * (b - a)
    fc, fd = neg_ll(c), neg_ll(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = neg_ll(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = neg_ll(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# asymptotic variance formulas


def asymptotic_variance(experiment: str, n_over_m: float,
                        substitute_half: bool = False) -> dict:
    """Evaluate the information-matrix and sandwich formulas by quadrature.

    Returns Fisher information I (under the model at theta0), the curvature
    matrix Itilde, the middle matrix V, the sandwich Itilde^-1 V Itilde^-1,
    the implied sqrt(n) standard deviations, and the (quasi-)MLE sandwich.
    With ``substitute_half=True`` the discriminator is replaced by the
    constant 1/2 and tau by 0, which must reduce the sandwich to
    (1 + n/m) / I exactly.
    """
    prof = _PROFILES[experiment]
    if prof.kind == "continuous":
        th0 = prof.theta0

        def dens_model(x):
            return np.exp(prof.ltheta(x, th0))

        def dens_real(x):
            return np.exp(prof.l0(x))

        def dvals(x):
            if substitute_half:
                return 0.5
            return _sigmoid(prof.l0(x) - prof.ltheta(x, th0))

        def log1md(x):
            if substitute_half:
                return np.log(0.5)
            return -_softplus(prof.l0(x) - prof.ltheta(x, th0))

        fisher = _integrate(lambda x: prof.score(x, th0) ** 2 * dens_model(x))
        itilde = 2.0 * _integrate(
            lambda x: (dvals(x) * prof.score(x, th0) ** 2
                       + (prof.hess(x, th0) + prof.score(x, th0) ** 2)
                       * log1md(x)) * dens_model(x))
        v_core = 4.0 * _integrate(
            lambda x: dvals(x) * (1.0 - dvals(x)) * prof.score(x, th0) ** 2
            * (dens_model(x) + n_over_m * dens_real(x)))
        if substitute_half:
            v_tau = 0.0
        else:
            def tau(e):
                x = prof.push(th0, e)
                return dvals(x) * (prof.dlog_model_dx(x, th0)
                                   - prof.dlog_real_dx(x))

            def dscore(e):
                x = prof.push(th0, e)
                return dvals(x) * prof.score(x, th0)

            lat = lambda e: np.exp(prof.latent_logpdf(e))
            v_tau = 4.0 * n_over_m * _integrate(
                lambda e: (2.0 * dscore(e) * tau(e) + tau(e) ** 2) * lat(e))
        V = v_core + v_tau
        a_mle = _integrate(lambda x: prof.hess(x, th0) * dens_real(x))
        b_mle = _integrate(lambda x: prof.score(x, th0) ** 2 * dens_real(x))
    else:
        th0 = prof.theta0()

        def pair_sum(f):
            def integrand(x):
                lr1, lr0 = prof.cond_real(x)
                lm1, lm0 = prof.cond_model(x, th0)
                out = 0.0
                for y, lr, lm in ((1.0, lr1, lm1), (0.0, lr0, lm0)):
                    out += f(y, x, lr, lm)
                return out * prof.x_pdf(x)
            return _integrate(integrand, -12.0, 14.0)

        def dval(lr, lm):
            return 0.5 if substitute_half else _sigmoid(lr - lm)

        def l1md(lr, lm):
            return np.log(0.5) if substitute_half else -_softplus(lr - lm)

        fisher = pair_sum(lambda y, x, lr, lm:
                          np.exp(lm) * prof.score(y, x, th0) ** 2)
        itilde = 2.0 * pair_sum(
            lambda y, x, lr, lm: np.exp(lm) * (
                dval(lr, lm) * prof.score(y, x, th0) ** 2
                + (prof.hess(y, x, th0) + prof.score(y, x, th0) ** 2)
                * l1md(lr, lm)))
        v_core = 4.0 * pair_sum(
            lambda y, x, lr, lm: dval(lr, lm) * (1.0 - dval(lr, lm))
            * prof.score(y, x, th0) ** 2
            * (np.exp(lm) + n_over_m * np.exp(lr)))
        V = v_core  # tau vanishes: the threshold map has a.e. zero derivative
        a_mle = pair_sum(lambda y, x, lr, lm: np.exp(lr) * prof.hess(y, x, th0))
        b_mle = pair_sum(lambda y, x, lr, lm:
                         np.exp(lr) * prof.score(y, x, th0) ** 2)
    if itilde <= 0:
        raise ValueError("curvature matrix is not positive definite")
    sandwich = V / itilde**2
    return {
        "theta0": th0,
        "fisher": fisher,
        "itilde": itilde,
        "V": V,
        "sandwich": sandwich,
        "sd_adversarial": float(np.sqrt(sandwich)),
        "sd_mle": float(np.sqrt(b_mle / a_mle**2)),
        "efficient_reference": float(np.sqrt((1.0 + n_over_m) / fisher)),
    }


# ---------------------------------------------------------------------------
# misspecification diagnostics (tau_n and the smooth-generation residual)


@dataclass
class MisspecDiagnostics:
    h_grid: np.ndarray
    empirical_curve: np.ndarray
    fitted_slope: float
    analytic_slope: float
    tau_is_zero: bool
    smooth_curve: np.ndarray


def misspec_diagnostics(experiment: str, h_grid, n: int, m: int,
                        state: RngState) -> MisspecDiagnostics:
    """Empirical-process curve of the smooth-generation assumption, its
    analytic tau-slope, and the centered score-residual curve.

    Population terms are evaluated by adaptive quadrature; empirical terms
    use m latent draws from the given stream.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    prof = _PROFILES[experiment]
    if prof.kind == "continuous":
        th0 = prof.theta0
        e = prof.draw_latent(state.child("latent"), m)

        def g(theta, xs):
            return -_softplus(prof.l0(prof.push(theta, xs))
                              - prof.ltheta(prof.push(theta, xs), th0))

        def pop_g(theta):
            return _integrate(lambda u: g(theta, u) * np.exp(prof.latent_logpdf(u)))

        def f_dscore(theta, xs):
            x = prof.push(theta, xs)
            d = _sigmoid(prof.l0(x) - prof.ltheta(x, th0))
            return d * prof.score(x, th0)

        def pop_dscore(theta):
            # expectation under P_theta of D_theta0 * score_theta0
            return _integrate(
                lambda u: f_dscore(theta, u) * np.exp(prof.latent_logpdf(u)))

        tau_vals = (_sigmoid(prof.l0(e) - prof.ltheta(e, th0))
                    * (prof.dlog_model_dx(e, th0) - prof.dlog_real_dx(e)))
        pop_tau = _integrate(
            lambda u: (_sigmoid(prof.l0(u) - prof.ltheta(u, th0))
                       * (prof.dlog_model_dx(u, th0) - prof.dlog_real_dx(u)))
            * np.exp(prof.latent_logpdf(u)))
        analytic_slope = float(np.sqrt(n) * (tau_vals.mean() - pop_tau))
        tau_zero = False

        base_emp = g(th0, e).mean()
        base_pop = pop_g(th0)
        emp = np.array([
            n * ((g(th0 + h / np.sqrt(n), e).mean() - pop_g(th0 + h / np.sqrt(n)))
                 - (base_emp - base_pop)) for h in h_grid])
        s_emp = f_dscore(th0, e).mean()
        s_pop = pop_dscore(th0)
        smooth = np.array([
            np.sqrt(n) * ((f_dscore(th0 + h / np.sqrt(n), e).mean()
                           - pop_dscore(th0 + h / np.sqrt(n)))
                          - (s_emp - s_pop)) for h in h_grid])
    else:
        th0 = prof.theta0()
        gen = state.child("latent")
        from .randkit import draw_standard_logistic, draw_standard_normal
        eps = draw_standard_logistic(gen.child("eps"), m)
        x = 1.0 + draw_standard_normal(gen.child("x"), m)
        lr1, lr0 = prof.cond_real(x)

        def g_vals(theta):
            y = (theta * x + eps >= 0.0).astype(float)
            lm1, lm0 = prof.cond_model(x, th0)
            lr = np.where(y == 1.0, lr1, lr0)
            lm = np.where(y == 1.0, lm1, lm0)
            return -_softplus(lr - lm)

        def pop_g(theta):
            def integrand(u):
                lr1u, lr0u = prof.cond_real(u)
                lm1u, lm0u = prof.cond_model(u, th0)
                lam = _sigmoid(theta * u)
                return (lam * (-_softplus(lr1u - lm1u))
                        + (1.0 - lam) * (-_softplus(lr0u - lm0u))) * prof.x_pdf(u)
            return _integrate(integrand, -12.0, 14.0)

        def s_vals(theta):
            y = (theta * x + eps >= 0.0).astype(float)
            lm1, lm0 = prof.cond_model(x, th0)
            lr = np.where(y == 1.0, lr1, lr0)
            lm = np.where(y == 1.0, lm1, lm0)
            return _sigmoid(lr - lm) * prof.score(y, x, th0)

        def pop_s(theta):
            def integrand(u):
                lr1u, lr0u = prof.cond_real(u)
                lm1u, lm0u = prof.cond_model(u, th0)
                lam = _sigmoid(theta * u)
                d1 = _sigmoid(lr1u - lm1u) * prof.score(1.0, u, th0)
                d0 = _sigmoid(lr0u - lm0u) * prof.score(0.0, u, th0)
                return (lam * d1 + (1.0 - lam) * d0) * prof.x_pdf(u)
            return _integrate(integrand, -12.0, 14.0)

        analytic_slope = 0.0
        tau_zero = True
        base_emp, base_pop = g_vals(th0).mean(), pop_g(th0)
        emp = np.array([
            n * ((g_vals(th0 + h / np.sqrt(n)).mean()
                  - pop_g(th0 + h / np.sqrt(n))) - (base_emp - base_pop))
            for h in h_grid])
        se_, sp_ = s_vals(th0).mean(), pop_s(th0)
        smooth = np.array([
            np.sqrt(n) * ((s_vals(th0 + h / np.sqrt(n)).mean()
                           - pop_s(th0 + h / np.sqrt(n))) - (se_ - sp_))
            for h in h_grid])
    slope = float(np.linalg.lstsq(
        np.column_stack([np.ones_like(h_grid), h_grid]), emp, rcond=None)[0][1])
    return MisspecDiagnostics(h_grid=h_grid, empirical_curve=emp,
                              fitted_slope=slope,
                              analytic_slope=analytic_slope,
                              tau_is_zero=tau_zero, smooth_curve=smooth)


# ---------------------------------------------------------------------------
# orthogonality witness


def orthogonality_gap(ctx_hat: EstimationContext, ctx_oracle: EstimationContext,
                      theta0: np.ndarray, h_grid) -> float:
    """max_h | [M(D_hat) - M0(D_hat0)] - [M(D) - M0(D0)] | over the local grid."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    base_hat = profiled_loss(theta0, ctx_hat).value
    base_orc = profiled_loss(theta0, ctx_oracle).value
    worst = 0.0
    for h in np.asarray(h_grid, dtype=float):
        t = theta0 + h
        gap = ((profiled_loss(t, ctx_hat).value - base_hat)
               - (profiled_loss(t, ctx_oracle).value - base_orc))
        worst = max(worst, abs(gap))
    return worst


# ---------------------------------------------------------------------------
# Monte Carlo harness


@dataclass
class McSummary:
    """Per-method replication draws with summary statistics.

    Failures are reported and excluded from the statistics, never silently
    dropped: the failure list is part of the summary.
    """

    estimates: dict
    n: int
    reps: int
    failures: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    sd: dict = field(default_factory=dict)
    sqrt_n_sd: dict = field(default_factory=dict)
    bin_edges: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, arr in self.estimates.items():
            arr = np.atleast_2d(np.asarray(arr, dtype=float))
            self.estimates[k] = arr
            self.mean[k] = arr.mean(axis=0)
            self.sd[k] = arr.std(axis=0, ddof=1) if arr.shape[0] > 1 else np.zeros(arr.shape[1])
            self.sqrt_n_sd[k] = np.sqrt(self.n) * self.sd[k]
            self.bin_edges[k] = np.histogram_bin_edges(arr[:, 0], bins="fd")

    def mc_se(self, method: str) -> np.ndarray:
        """Monte Carlo standard error of the replication mean."""
        arr = self.estimates[method]
        return self.sd[method] / np.sqrt(arr.shape[0])


def _mc_chunk(task, rep_ids, state, task_args):
    out = []
    for r in rep_ids:
        rep_state = state.child(("rep", r))
        try:
            out.append((r, task(rep_state, *task_args), None))
        except Exception as exc:             # noqa: BLE001 -- reported upstream
            out.append((r, None, repr(exc)))
    return out


def monte_carlo(task, R: int, state: RngState, n: int, jobs: int = 1,
                task_args=(), max_fail_frac: float = 0.05) -> McSummary:
    """R independent replications of ``task(rep_state, *task_args)``.

    The task returns a dict of method -> parameter vector.  Streams are split
    per replication, so the summary is identical for any job count.
    """
    rep_ids = list(range(R))
    if jobs > 1:
        chunks = [rep_ids[i::jobs] for i in range(jobs)]
        results = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_mc_chunk, task, c, state, task_args)
                    for c in chunks if c]
            for fut in futs:
                results.extend(fut.result())
        results.sort(key=lambda t: t[0])
    else:
        results = _mc_chunk(task, rep_ids, state, task_args)
    failures = [(r, msg) for r, _, msg in results if msg is not None]
    ok = [est for _, est, msg in results if msg is None]
    if len(failures) > max_fail_frac * R and len(failures) > 1:
        raise RuntimeError(
            f"{len(failures)} of {R} replications failed: {failures[:5]}")
    if not ok:
        raise RuntimeError("every replication failed")
    methods = ok[0].keys()
    estimates = {k: np.vstack([np.atleast_1d(e[k]) for e in ok]) for k in methods}
    return McSummary(estimates=estimates, n=n, reps=R, failures=failures)
