"""The minimax sample objective: cross-entropy loss, inner maximization over
the discriminator, and the profiled loss theta -> max_D loss(theta, D).

The loss of a sample pair is

    (1/n) sum log D(real_i)  +  (1/m) sum log(1 - D(synth_i)),

bounded between 2 log(1/2) (indistinguishable samples) and 0 (perfect
separation).  The two averages keep their own 1/n and 1/m weights when the
sample sizes differ.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from scipy.special import expit as _sigmoid

from . import models
from .discriminators import (
    DiscriminatorSpec,
    MlpFamily,
    OracleDiscriminator,
    build_family,
    grad_index_loss,
    index_loss_value,
)
from .randkit import LatentDraws, RngState

__all__ = [
    "CLAMP_EPS",
    "TWO_LOG_HALF",
    "LossValue",
    "TrainConfig",
    "TrainResult",
    "cross_entropy_loss",
    "train_index_family",
    "train_mlp",
    "train_discriminator",
    "EstimationContext",
    "make_context",
    "profiled_loss",
]

CLAMP_EPS = 1e-12
TWO_LOG_HALF = 2.0 * np.log(0.5)


@dataclass(frozen=True)
class LossValue:
    """One evaluation of the sample loss, with clamp bookkeeping."""

    value: float
    n: int
    m: int
    clamp_events: int = 0

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class TrainConfig:
    """How the inner maximization is solved.

    newton_irls serves the logistic and parametric families; full_batch_adam
    serves the MLP (fixed iteration budget, monotone accepted steps).
    """

    optimizer: str = "newton_irls"
    max_iter: int = 60
    tol: float = 1e-9
    ridge: float = 1e-8
    lr: float = 0.05
    mlp_iters: int = 2000
    init_label: str = "disc-init"

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tolerance must be positive and iterations >= 1")
        if self.optimizer not in ("newton_irls", "full_batch_adam"):
            raise ValueError(f"unknown training optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TrainResult:
    params: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    loss: float
    separation_warning: bool = False


def cross_entropy_loss(d_real: np.ndarray, d_synth: np.ndarray,
                       clamp: float = CLAMP_EPS) -> LossValue:
    """Sample loss from discriminator values on the two samples."""
    d_real = np.asarray(d_real, dtype=float)
    d_synth = np.asarray(d_synth, dtype=float)
    if d_real.size == 0 or d_synth.size == 0:
        raise ValueError("both samples must be nonempty")
    clamped = int(np.sum(d_real < clamp) + np.sum(d_real > 1.0 - clamp)
                  + np.sum(d_synth < clamp) + np.sum(d_synth > 1.0 - clamp))
    dr = np.clip(d_real, clamp, 1.0 - clamp)
    ds = np.clip(d_synth, clamp, 1.0 - clamp)
    value = float(np.mean(np.log(dr)) + np.mean(np.log1p(-ds)))
    return LossValue(value=value, n=d_real.size, m=d_synth.size,
                     clamp_events=clamped)


# ---------------------------------------------------------------------------
# trainers


def train_index_family(family, prep_real, prep_synth, cfg: TrainConfig,
                       start: np.ndarray | None = None) -> TrainResult:
    """Ridge Newton ascent on the concave (or smooth) index-family loss.

    Terminates when the gradient infinity-norm falls below tol.  Separation
    drives the weights large; the iteration cap then returns a flagged but
    finite solution (multicollinearity/separation warning, not an error).
    """
    w_real = 1.0 / prep_real.shape[0]
    w_synth = 1.0 / prep_synth.shape[0]
    params = family.neutral_start() if start is None else np.asarray(start, float).copy()
    loss, grad, hess = grad_index_loss(family, params, prep_real, prep_synth,
                                       w_real, w_synth)
    converged = False
    it = 0
    stall = 0
    eye = np.eye(params.size)
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= cfg.tol:
            converged = True
            break
        if stall >= 2:
            # loss converged at working precision along a quasi-separated or
            # collinear direction; the weights there no longer move the loss
            break
        A = -hess + cfg.ridge * eye
        try:
            step = np.linalg.solve(A, grad)
        except np.linalg.LinAlgError:
            step = grad / max(np.max(np.abs(np.diag(A))), cfg.ridge)
        scale = 1.0
        improved = False
        for _ in range(30):
            cand = params + scale * step
            cl = index_loss_value(family, cand, prep_real, prep_synth,
                                  w_real, w_synth)
            if np.isfinite(cl) and cl >= loss:
                stall = stall + 1 if cl - loss <= 1e-14 * max(1.0, -loss) else 0
                params = cand
                loss, grad, hess = grad_index_loss(family, cand, prep_real,
                                                   prep_synth, w_real, w_synth)
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    gnorm = float(np.max(np.abs(grad)))
    return TrainResult(params=params, converged=converged, iterations=it,
                       grad_norm=gnorm, loss=float(loss),
                       separation_warning=not converged)


def train_mlp(mlp: MlpFamily, init: np.ndarray, prep_real, prep_synth,
              cfg: TrainConfig) -> TrainResult:
    """Deterministic full-batch ascent with adaptive moment scaling.

    A fixed iteration budget, with each step accepted only if it does not
    decrease the loss (halving the step a few times otherwise), keeps the
    accepted-loss trace non-decreasing and the result a stable function of
    the inputs.  Single-hidden-layer nets take a compiled fast path when
    numba is available; the numpy loop below is the reference.
    """
    w_real = 1.0 / prep_real.shape[0]
    w_synth = 1.0 / prep_synth.shape[0]
    X, s, c = mlp.stack(prep_real, prep_synth, w_real, w_synth)
    if len(mlp.hidden) == 1:
        return _train_mlp_one_hidden(mlp, init, X, s, c, cfg)
    w = init.copy()
    loss, grad = mlp.stacked_loss_grad(w, X, s, c)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    b1, b2, eps = 0.9, 0.999, 1e-8
    trust = 1.0
    for t in range(1, cfg.mlp_iters + 1):
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        mh = m / (1.0 - b1**t)
        vh = v / (1.0 - b2**t)
        step = cfg.lr * mh / (np.sqrt(vh) + eps)
        scale = min(1.0, trust * 2.0) if t % 8 == 0 else trust
        for _ in range(8):
            cand = w + scale * step
            cl, cg = mlp.stacked_loss_grad(cand, X, s, c)
            if np.isfinite(cl) and cl >= loss:
                w, loss, grad = cand, cl, cg
                trust = scale
                break
            scale *= 0.5
        # all candidates hurt: keep the point, refresh moments from here
    # the family always contains the constant 1/2; never do worse than that
    floor = TWO_LOG_HALF
    if loss < floor:
        w = w.copy()
        w[-(mlp.shapes[-1][0] + 1):] = 0.0           # zero the output layer
        loss, grad = mlp.stacked_loss_grad(w, X, s, c)
    return TrainResult(params=w, converged=True, iterations=cfg.mlp_iters,
                       grad_norm=float(np.max(np.abs(grad))), loss=float(loss))


def _train_mlp_one_hidden(mlp: MlpFamily, init: np.ndarray, X, s, c,
                          cfg: TrainConfig) -> TrainResult:
    """Buffer-reusing variant of the reference loop for one hidden layer.

    Identical update rule and acceptance policy; only the evaluation уses
    preallocated workspaces to cut array-allocation overhead in the hot loop.
    """
    N, d = X.shape
    h = mlp.hidden[0]
    n0 = d * h + h
    cs = c * s
    Z1 = np.empty((N, h)); T = np.empty((N, h)); D1 = np.empty((N, h))
    u = np.empty(N); q = np.empty(N); dz = np.empty(N); zv = np.empty(N)

    def fg(wvec, grad_out):
        W0 = wvec[:d * h].reshape(d, h)
        b0 = wvec[d * h:n0]
        w1 = wvec[n0:n0 + h]
        b1 = wvec[n0 + h]
        np.dot(X, W0, out=Z1)
        np.add(Z1, b0, out=Z1)
        np.tanh(Z1, out=Z1)                      # Z1 now holds activations
        np.dot(Z1, w1, out=zv)
        np.add(zv, b1, out=zv)
        np.multiply(s, zv, out=u)
        np.negative(u, out=u)
        loss = -float(np.dot(c, np.logaddexp(0.0, u)))
        _sigmoid(u, out=q)
        np.multiply(cs, q, out=dz)
        gW0 = grad_out[:d * h].reshape(d, h)
        gb0 = grad_out[d * h:n0]
        np.dot(Z1.T, dz, out=grad_out[n0:n0 + h])
        grad_out[n0 + h] = dz.sum()
        np.multiply(dz[:, None], w1[None, :], out=D1)
        np.multiply(Z1, Z1, out=T)
        np.subtract(1.0, T, out=T)
        np.multiply(D1, T, out=D1)
        np.dot(X.T, D1, out=gW0)
        D1.sum(axis=0, out=gb0)
        return loss

    w = init.copy()
    grad = np.empty_like(w)
    cand_grad = np.empty_like(w)
    loss = fg(w, grad)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    b1m, b2m, eps = 0.9, 0.999, 1e-8
    trust = 1.0       # persistent accepted-step scale: grows back gently
    for t in range(1, cfg.mlp_iters + 1):
        m = b1m * m + (1.0 - b1m) * grad
        v = b2m * v + (1.0 - b2m) * grad * grad
        step = (cfg.lr / (1.0 - b1m**t)) * m / (np.sqrt(v / (1.0 - b2m**t)) + eps)
        scale = min(1.0, trust * 2.0) if t % 8 == 0 else trust
        for _ in range(8):
            cand = w + scale * step
            cl = fg(cand, cand_grad)
            if np.isfinite(cl) and cl >= loss:
                w, loss = cand, cl
                grad, cand_grad = cand_grad, grad
                trust = scale
                break
            scale *= 0.5
    if loss < TWO_LOG_HALF:
        w = w.copy()
        w[-(mlp.shapes[-1][0] + 1):] = 0.0
        loss = fg(w, grad)
    return TrainResult(params=w, converged=True, iterations=cfg.mlp_iters,
                       grad_norm=float(np.max(np.abs(grad))), loss=float(loss))


def train_discriminator(family, real_rows, synth_rows, cfg: TrainConfig,
                        init: np.ndarray | None = None,
                        start: np.ndarray | None = None) -> TrainResult:
    """Dispatch the inner maximization for a trainable family."""
    prep_real = family.prep(real_rows)
    prep_synth = family.prep(synth_rows)
    if isinstance(family, MlpFamily):
        if init is None:
            raise ValueError("mlp training needs its frozen init weights")
        return train_mlp(family, init, prep_real, prep_synth, cfg)
    return train_index_family(family, prep_real, prep_synth, cfg, start=start)


# ---------------------------------------------------------------------------
# estimation contexts and the profiled loss


@dataclass
class EstimationContext:
    """Everything one adversarial estimation needs, with fixed latent draws.

    The latent draws, the discriminator architecture, the training
    configuration, and (for the MLP) the init weights are all frozen at
    construction, so the profiled loss is a deterministic function of theta.
    """

    model: models.GeneratorSpec
    template: models.ParamVector
    real: models.Dataset
    latent: LatentDraws
    disc: DiscriminatorSpec
    train: TrainConfig
    family: object = None
    oracle: OracleDiscriminator | None = None
    mlp_init: np.ndarray | None = None
    covariates: models.Dataset | None = None
    prep_real: np.ndarray = None
    warm_start: bool = False
    cache: dict = field(default_factory=dict)
    last_train: TrainResult | None = None

    def simulate(self, theta_values: np.ndarray) -> models.Dataset:
        theta = self.template.with_values(theta_values)
        return models.simulate(self.model, theta, self.latent, self.covariates)


def make_context(model: models.GeneratorSpec, template: models.ParamVector,
                 real: models.Dataset, latent: LatentDraws,
                 disc: DiscriminatorSpec, train: TrainConfig | None = None,
                 oracle: OracleDiscriminator | None = None,
                 rng: RngState | None = None,
                 warm_start: bool = False) -> EstimationContext:
    train = train or TrainConfig()
    covariates = None
    if model.model == "binary_choice":
        covariates = models.Dataset(rows=real.covariate_matrix(),
                                    columns=("x",), roles=("covariate",))
    ctx = EstimationContext(model=model, template=template, real=real,
                            latent=latent, disc=disc, train=train,
                            oracle=oracle, covariates=covariates,
                            warm_start=warm_start)
    if disc.family == "oracle":
        if oracle is None:
            raise ValueError("oracle discriminator context needs the oracle")
        return ctx
    center = scale = None
    if disc.family == "mlp":
        center = real.rows.mean(axis=0)
        scale = real.rows.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
    ctx.family = build_family(disc, input_dim=real.rows.shape[1],
                              center=center, scale=scale)
    if disc.family == "mlp":
        seed_state = (rng or latent.origin).child(train.init_label)
        ctx.mlp_init = ctx.family.init_weights(seed_state)
    ctx.prep_real = ctx.family.prep(real.rows)
    return ctx


def _family_prob(family, params: np.ndarray, prep: np.ndarray) -> np.ndarray:
    """D values from an already-prepared design (no re-preprocessing)."""
    if isinstance(family, MlpFamily):
        z, _, _ = family._forward(np.asarray(params, dtype=float), prep)
        return _sigmoid(z)
    index, _, _ = family.index_parts(np.asarray(params, dtype=float), prep)
    return _sigmoid(index)


def profiled_loss(theta_values, ctx: EstimationContext) -> LossValue:
    """Simulate at theta, solve the inner maximization, evaluate the loss.

    Results are cached per theta so surface scans and optimizer retries reuse
    the trained weights.
    """
    theta_values = np.atleast_1d(np.asarray(theta_values, dtype=float))
    key = theta_values.tobytes()
    hit = ctx.cache.get(key)
    if hit is not None:
        ctx.last_train = hit[1]
        return hit[0]
    synth = ctx.simulate(theta_values)
    if ctx.disc.family == "oracle":
        theta = ctx.template.with_values(theta_values)
        d_real = ctx.oracle.prob(theta, ctx.real.rows)
        d_synth = ctx.oracle.prob(theta, synth.rows)
        loss = cross_entropy_loss(d_real, d_synth)
        result = None
    else:
        prep_synth = ctx.family.prep(synth.rows)
        start = None
        if ctx.warm_start and ctx.last_train is not None and not isinstance(
                ctx.family, MlpFamily):
            start = ctx.last_train.params
        if isinstance(ctx.family, MlpFamily):
            result = train_mlp(ctx.family, ctx.mlp_init, ctx.prep_real,
                               prep_synth, ctx.train)
        else:
            result = train_index_family(ctx.family, ctx.prep_real, prep_synth,
                                        ctx.train, start=start)
        d_real = _family_prob(ctx.family, result.params, ctx.prep_real)
        d_synth = _family_prob(ctx.family, result.params, prep_synth)
        loss = cross_entropy_loss(d_real, d_synth)
    ctx.cache[key] = (loss, result)
    ctx.last_train = result
    return loss
