"""Classification functions D: X -> [0,1].

Four families:

* oracle     -- closed-form density ratio p0 / (p0 + p_theta), available only
                when both laws have tractable densities;
* logistic   -- Lambda(lambda' f(x)) over a declarative feature map, linear in
                the weights, trained by ridge Newton on the concave loss;
* parametric -- small smooth families tailored to an experiment, where one
                weight may enter nonlinearly (a trainable shift inside a
                softplus); trained by the same Newton loop;
* mlp        -- feed-forward nets with tanh/sigmoid hidden layers, sigmoid
                output, and exact reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _sigmoid
from scipy.special import log_ndtr as _log_ndtr

from . import models
from .randkit import RngState

__all__ = [
    "FeatureMap",
    "poly_features",
    "binary_interact_features",
    "binary_mild_features",
    "normal_misspec_features",
    "roy_marginal_features",
    "roy_cross_features",
    "feature_map_by_name",
    "OracleDiscriminator",
    "LogisticFamily",
    "ParametricFamily",
    "MlpFamily",
    "DiscriminatorSpec",
    "build_family",
]


def _softplus(t):
    return np.logaddexp(0.0, t)


# ---------------------------------------------------------------------------
# declarative feature maps


@dataclass(frozen=True)
class FeatureMap:
    """Declarative list of feature terms evaluated column-wise on a dataset.

    Term vocabulary: ("const",), ("pow", col, k), ("cross", i, j),
    ("pow_cross", col, k, other), ("softplus_neg", col), ("relu", col),
    ("logphi_pm", ycol, xcol).  The last evaluates log Phi((2y - 1) x) via a
    numerically stable log-CDF.
    """

    name: str
    terms: tuple[tuple, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("feature map needs at least one term")

    @property
    def k(self) -> int:
        return len(self.terms)

    def names(self) -> tuple[str, ...]:
        out = []
        for t in self.terms:
            kind = t[0]
            if kind == "const":
                out.append("1")
            elif kind == "pow":
                out.append(f"x{t[1]}^{t[2]}" if t[2] != 1 else f"x{t[1]}")
            elif kind == "cross":
                out.append(f"x{t[1]}*x{t[2]}")
            elif kind == "pow_cross":
                out.append(f"x{t[1]}^{t[2]}*x{t[3]}")
            elif kind == "softplus_neg":
                out.append(f"log(1+exp(-x{t[1]}))")
            elif kind == "relu":
                out.append(f"max(x{t[1]},0)")
            elif kind == "logphi_pm":
                out.append(f"logPhi((2*x{t[1]}-1)*x{t[2]})")
            else:
                raise ValueError(f"unknown feature term {t!r}")
        return tuple(out)

    def evaluate(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        cols = []
        for t in self.terms:
            kind = t[0]
            if kind == "const":
                cols.append(np.ones(rows.shape[0]))
            elif kind == "pow":
                cols.append(rows[:, t[1]] ** t[2])
            elif kind == "cross":
                cols.append(rows[:, t[1]] * rows[:, t[2]])
            elif kind == "pow_cross":
                cols.append(rows[:, t[1]] ** t[2] * rows[:, t[3]])
            elif kind == "softplus_neg":
                cols.append(_softplus(-rows[:, t[1]]))
            elif kind == "relu":
                cols.append(np.maximum(rows[:, t[1]], 0.0))
            elif kind == "logphi_pm":
                y, x = rows[:, t[1]], rows[:, t[2]]
                cols.append(_log_ndtr((2.0 * y - 1.0) * x))
            else:
                raise ValueError(f"unknown feature term {t!r}")
        out = np.column_stack(cols)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"feature map {self.name!r} produced non-finite values")
        return out


def poly_features(degree: int, col: int = 0) -> FeatureMap:
    """1, x, x^2, ..., x^degree on one column."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    terms = [("const",)] + [("pow", col, k) for k in range(1, degree + 1)]
    return FeatureMap(f"poly{degree}", tuple(terms))


def binary_interact_features(degree: int) -> FeatureMap:
    """1, x, x*y, x^2, x^2*y, ... for binary data with columns (y, x)."""
    terms = [("const",)]
    for k in range(1, degree + 1):
        terms.append(("pow", 1, k))
        terms.append(("pow_cross", 1, k, 0))
    return FeatureMap(f"binary_interact{degree}", tuple(terms))


def binary_mild_features() -> FeatureMap:
    """Mildly misspecified binary map: 1, x*y, x, max(x, 0)."""
    return FeatureMap("binary_mild",
                      (("const",), ("cross", 1, 0), ("pow", 1, 1), ("relu", 1)))


def normal_misspec_features() -> FeatureMap:
    """1, x, x^2, log(1+exp(-x)): spans the normal-vs-logistic oracle index."""
    return FeatureMap("normal_misspec",
                      (("const",), ("pow", 0, 1), ("pow", 0, 2), ("softplus_neg", 0)))


def roy_marginal_features() -> FeatureMap:
    """Marginal wage/choice moments of the two-period Roy data (7 terms)."""
    return FeatureMap("roy_marginal", (
        ("const",), ("pow", 0, 1), ("pow", 1, 1), ("pow", 2, 1), ("pow", 3, 1),
        ("pow", 0, 2), ("pow", 2, 2),
    ))


def roy_cross_features() -> FeatureMap:
    """Marginal Roy map plus the across-period wage cross moment (8 terms)."""
    return FeatureMap("roy_cross", roy_marginal_features().terms + (("cross", 0, 2),))


_NAMED_MAPS = {
    "normal_misspec": normal_misspec_features,
    "binary_mild": binary_mild_features,
    "roy_marginal": roy_marginal_features,
    "roy_cross": roy_cross_features,
}


def feature_map_by_name(name: str) -> FeatureMap:
    """Resolve a built-in map name or 'polyD' / 'binary_interactD'."""
    if name in _NAMED_MAPS:
        return _NAMED_MAPS[name]()
    if name.startswith("poly"):
        return poly_features(int(name[4:]))
    if name.startswith("binary_interact"):
        return binary_interact_features(int(name[len("binary_interact"):]))
    raise ValueError(f"unknown feature map {name!r}")


# ---------------------------------------------------------------------------
# oracle


@dataclass(frozen=True)
class OracleDiscriminator:
    """D_theta(x) = p0(x) / (p0(x) + p_theta(x)) from the two log densities."""

    real_spec: models.GeneratorSpec
    real_theta: models.ParamVector
    model_spec: models.GeneratorSpec

    def prob(self, theta: models.ParamVector, rows) -> np.ndarray:
        l0 = models.log_density(self.real_spec, self.real_theta, rows)
        lt = models.log_density(self.model_spec, theta, rows)
        with np.errstate(invalid="ignore"):
            d = _sigmoid(l0 - lt)
        # both densities zero: the point carries no signal either way
        both = np.isneginf(l0) & np.isneginf(lt)
        return np.where(both, 0.5, d)


# ---------------------------------------------------------------------------
# index families (logistic and smooth parametric): trained by Newton


class LogisticFamily:
    """Lambda(lambda' f(x)); the weights enter linearly."""

    kind = "logistic"

    def __init__(self, fmap: FeatureMap):
        self.fmap = fmap
        self.n_params = fmap.k

    def neutral_start(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def prep(self, rows: np.ndarray) -> np.ndarray:
        return self.fmap.evaluate(rows)

    def prob(self, params: np.ndarray, rows: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.size != self.n_params:
            raise ValueError("weight dimension does not match the feature count")
        return _sigmoid(self.prep(rows) @ params)

    def index_parts(self, params: np.ndarray, prep: np.ndarray):
        index = prep @ params
        return index, prep, None


class ParametricFamily:
    """Experiment-tailored smooth discriminators.

    ``loc_shift``    Lambda(a0 - 2 log(1+e^-x) + 2 log(1+e^(a1-x)))   (2 weights)
    ``binary_shift`` Lambda(a0 + a1 x y + a2 x + log(1+e^(-a3 x))
                             + a4 logPhi((2y-1)x))                    (5 weights)

    The shift weights (a1 resp. a3) enter nonlinearly, so these are not
    expressible as linear-in-weights logistic maps.
    """

    kind = "parametric"

    def __init__(self, pid: str):
        if pid not in ("loc_shift", "binary_shift"):
            raise ValueError(f"unknown parametric discriminator {pid!r}")
        self.pid = pid
        self.n_params = 2 if pid == "loc_shift" else 5

    def neutral_start(self) -> np.ndarray:
        # start where the family represents the constant 1/2
        start = np.zeros(self.n_params)
        if self.pid == "binary_shift":
            start[0] = -np.log(2.0)
        return start

    def prep(self, rows: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(rows, dtype=float))

    def prob(self, params: np.ndarray, rows: np.ndarray) -> np.ndarray:
        index, _, _ = self.index_parts(np.asarray(params, dtype=float),
                                       self.prep(rows))
        return _sigmoid(index)

    def index_parts(self, params: np.ndarray, prep: np.ndarray):
        """Returns (index, d index/d params, {(i, j): d2 index}) per row."""
        n = prep.shape[0]
        if self.pid == "loc_shift":
            a0, a1 = params
            x = prep[:, 0]
            index = a0 - 2.0 * _softplus(-x) + 2.0 * _softplus(a1 - x)
            grad = np.column_stack([np.ones(n), 2.0 * _sigmoid(a1 - x)])
            lam = _sigmoid(a1 - x)
            hess = {(1, 1): 2.0 * lam * (1.0 - lam)}
            return index, grad, hess
        a0, a1, a2, a3, a4 = params
        y, x = prep[:, 0], prep[:, 1]
        logphi = _log_ndtr((2.0 * y - 1.0) * x)
        index = a0 + a1 * x * y + a2 * x + _softplus(-a3 * x) + a4 * logphi
        lam = _sigmoid(-a3 * x)
        grad = np.column_stack([np.ones(n), x * y, x, -x * lam, logphi])
        hess = {(3, 3): x * x * lam * (1.0 - lam)}
        return index, grad, hess


def index_loss_value(family, params: np.ndarray, prep_real: np.ndarray,
                     prep_synth: np.ndarray, w_real: float, w_synth: float) -> float:
    """Loss only (used by line searches; skips gradient and Hessian work)."""
    params = np.asarray(params, dtype=float)
    idx_r, _, _ = family.index_parts(params, prep_real)
    idx_s, _, _ = family.index_parts(params, prep_synth)
    return float(w_real * np.sum(-_softplus(-idx_r))
                 + w_synth * np.sum(-_softplus(idx_s)))


def grad_index_loss(family, params: np.ndarray, prep_real: np.ndarray,
                    prep_synth: np.ndarray, w_real: float, w_synth: float):
    """Loss, exact gradient, and exact Hessian (w.r.t. the weights) of

        w_real * sum log Lambda(index(real)) + w_synth * sum log(1 - Lambda(index(synth)))

    for a family exposing index_parts.  The Hessian is negative semidefinite
    whenever the index is linear in the weights.
    """
    params = np.asarray(params, dtype=float)
    idx_r, g_r, h_r = family.index_parts(params, prep_real)
    idx_s, g_s, h_s = family.index_parts(params, prep_synth)
    p_r, p_s = _sigmoid(idx_r), _sigmoid(idx_s)
    loss = w_real * np.sum(-_softplus(-idx_r)) + w_synth * np.sum(-_softplus(idx_s))
    grad = w_real * (g_r.T @ (1.0 - p_r)) - w_synth * (g_s.T @ p_s)
    wr = p_r * (1.0 - p_r)
    ws = p_s * (1.0 - p_s)
    hess = -w_real * (g_r.T * wr) @ g_r - w_synth * (g_s.T * ws) @ g_s
    if h_r:
        for (i, j), vec in h_r.items():
            hess[i, j] += w_real * np.sum((1.0 - p_r) * vec)
            if i != j:
                hess[j, i] += w_real * np.sum((1.0 - p_r) * vec)
    if h_s:
        for (i, j), vec in h_s.items():
            hess[i, j] += -w_synth * np.sum(p_s * vec)
            if i != j:
                hess[j, i] += -w_synth * np.sum(p_s * vec)
    return loss, grad, hess


# ---------------------------------------------------------------------------
# multilayer perceptron with exact backprop


class MlpFamily:
    """Feed-forward net: hidden layers with tanh or sigmoid, sigmoid output.

    Inputs may be standardized by frozen (center, scale) so training behaves
    uniformly across models; the statistics are fixed per estimation context,
    never re-fit per theta.
    """

    kind = "mlp"

    def __init__(self, input_dim: int, hidden: tuple[int, ...],
                 activation: str = "tanh",
                 center: np.ndarray | None = None,
                 scale: np.ndarray | None = None):
        if not hidden or any(w < 1 for w in hidden):
            raise ValueError("need at least one hidden layer of width >= 1")
        if activation not in ("tanh", "sigmoid"):
            raise ValueError("hidden activation must be tanh or sigmoid")
        self.input_dim = input_dim
        self.hidden = tuple(int(w) for w in hidden)
        self.activation = activation
        self.center = np.zeros(input_dim) if center is None else np.asarray(center, float)
        self.scale = np.ones(input_dim) if scale is None else np.asarray(scale, float)
        dims = (input_dim,) + self.hidden + (1,)
        self.shapes = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        self.n_params = sum(di * do + do for di, do in self.shapes)

    def init_weights(self, state: RngState) -> np.ndarray:
        """Uniform(-0.5, 0.5) / sqrt(fan-in) from a dedicated stream."""
        gen = state.generator()
        chunks = []
        for di, do in self.shapes:
            s = 1.0 / np.sqrt(di)
            chunks.append((gen.random((di, do)) - 0.5) * s)
            chunks.append((gen.random(do) - 0.5) * s)
        return np.concatenate([c.ravel() for c in chunks])

    def unpack(self, w: np.ndarray):
        out, pos = [], 0
        for di, do in self.shapes:
            W = w[pos:pos + di * do].reshape(di, do)
            pos += di * do
            b = w[pos:pos + do]
            pos += do
            out.append((W, b))
        return out

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else _sigmoid(z)

    def _dact(self, a):
        return 1.0 - a * a if self.activation == "tanh" else a * (1.0 - a)

    def prep(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return (rows - self.center) / self.scale

    def _forward(self, w: np.ndarray, X: np.ndarray):
        layers = self.unpack(w)
        acts = [X]
        a = X
        for W, b in layers[:-1]:
            a = self._act(a @ W + b)
            acts.append(a)
        W, b = layers[-1]
        z_out = (a @ W + b).ravel()
        return z_out, acts, layers

    def prob(self, w: np.ndarray, rows: np.ndarray) -> np.ndarray:
        z, _, _ = self._forward(np.asarray(w, dtype=float), self.prep(rows))
        return _sigmoid(z)

    def loss(self, w, prep_real, prep_synth, w_real, w_synth) -> float:
        zr, _, _ = self._forward(w, prep_real)
        zs, _, _ = self._forward(w, prep_synth)
        return float(w_real * np.sum(-_softplus(-zr)) + w_synth * np.sum(-_softplus(zs)))

    def stack(self, prep_real, prep_synth, w_real, w_synth):
        """One-time stacking of a training pair: inputs, per-row signs
        (+1 real, -1 synthetic), and per-row loss weights."""
        X = np.vstack([prep_real, prep_synth])
        nr = prep_real.shape[0]
        s = np.empty(X.shape[0])
        s[:nr] = 1.0
        s[nr:] = -1.0
        c = np.empty(X.shape[0])
        c[:nr] = w_real
        c[nr:] = w_synth
        return X, s, c

    def stacked_loss_grad(self, w, X, s, c):
        """Loss and exact gradient on a pre-stacked pair.

        With per-row sign s and weight c the loss is sum c * log Lambda(s z),
        so d loss / d z = c * s * Lambda(-s z): (1 - D) on real rows and -D
        on synthetic rows, with their separate 1/n and 1/m weights.
        """
        z, acts, layers = self._forward(w, X)
        u = -s * z
        loss = -float(np.dot(c, np.logaddexp(0.0, u)))
        dz = (c * s) * _sigmoid(u)
        delta = dz[:, None]
        grads = [None] * len(layers)
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a_prev = acts[li]
            gW = a_prev.T @ delta
            gb = delta.sum(axis=0)
            grads[li] = (gW, gb)
            if li > 0:
                delta = (delta @ W.T) * self._dact(acts[li])
            if not np.all(np.isfinite(gW)):
                raise FloatingPointError(f"non-finite gradient in layer {li}")
        flat = np.concatenate([np.concatenate([gW.ravel(), gb.ravel()])
                               for gW, gb in grads])
        return loss, flat

    def loss_and_grad(self, w, prep_real, prep_synth, w_real, w_synth):
        """Exact gradient of the weighted cross-entropy loss via reverse mode."""
        X, s, c = self.stack(prep_real, prep_synth, w_real, w_synth)
        return self.stacked_loss_grad(w, X, s, c)


# ---------------------------------------------------------------------------
# config-level discriminator description


@dataclass(frozen=True)
class DiscriminatorSpec:
    """What discriminator an estimation run uses (family plus its knobs)."""

    family: str                       # oracle | logistic | parametric | mlp
    features: str | None = None       # named map or polyD / binary_interactD
    parametric_id: str | None = None
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"
    label: str = ""

    def __post_init__(self):
        if self.family not in ("oracle", "logistic", "parametric", "mlp"):
            raise ValueError(f"unknown discriminator family {self.family!r}")
        if self.family == "logistic" and not self.features:
            raise ValueError("logistic family needs a feature map name")
        if self.family == "parametric" and not self.parametric_id:
            raise ValueError("parametric family needs an id")
        if self.family == "mlp" and not self.hidden:
            raise ValueError("mlp family needs hidden widths")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self) -> str:
        if self.family == "logistic":
            return f"logistic:{self.features}"
        if self.family == "parametric":
            return f"parametric:{self.parametric_id}"
        if self.family == "mlp":
            return "mlp:" + "x".join(map(str, self.hidden))
        return "oracle"


def build_family(spec: DiscriminatorSpec, input_dim: int,
                 center=None, scale=None):
    """Instantiate the trainable family for one estimation context."""
    if spec.family == "logistic":
        return LogisticFamily(feature_map_by_name(spec.features))
    if spec.family == "parametric":
        return ParametricFamily(spec.parametric_id)
    if spec.family == "mlp":
        return MlpFamily(input_dim, spec.hidden, spec.activation,
                         center=center, scale=scale)
    raise ValueError("oracle discriminators are not trained")
