import numpy as np
import pytest

from advestim import models as md
from advestim.discriminators import DiscriminatorSpec
from advestim.estimators import (
    OptimizerConfig,
    adversarial_estimate,
    fit_probit,
    ii_estimate,
    jittered_starts,
    location_poly_moments,
    mle_estimate,
    probit_mean_score,
    roy_moments,
    smm_estimate,
    _poly_basis,
)
from advestim.objective import make_context
from advestim.randkit import RngState


def _draw(spec, theta_values, state, n):
    t = md.param_template(spec.model, theta_values)
    return md.draw_dataset(spec, t, state, n)


# ---------------------------------------------------------------------------
# maximum likelihood


def test_normal_qmle_equals_sample_mean(state):
    spec = md.GeneratorSpec("normal_location")
    real = md.GeneratorSpec("logistic_location")
    data = _draw(real, [0.4], state.child("d"), 250)
    t = md.param_template("normal_location")
    closed = mle_estimate(spec, t, data)
    assert closed.theta.values[0] == float(np.mean(data.column("x")))
    iterative = mle_estimate(spec, t, data, closed_form=False)
    assert iterative.theta.values[0] == pytest.approx(closed.theta.values[0],
                                                      abs=1e-10)


def test_logistic_mle_near_truth(state):
    spec = md.GeneratorSpec("logistic_location")
    data = _draw(spec, [0.7], state.child("d"), 4000)
    rep = mle_estimate(spec, md.param_template("logistic_location"), data)
    assert rep.converged
    assert rep.theta.values[0] == pytest.approx(0.7, abs=0.12)
    assert rep.trace_sound()


def test_binary_logit_mle(state):
    spec = md.GeneratorSpec("binary_choice", noise="logistic")
    data = _draw(spec, [1.0], state.child("d"), 5000)
    rep = mle_estimate(spec, md.param_template("binary_choice"), data)
    assert rep.theta.values[0] == pytest.approx(1.0, abs=0.15)


def test_roy_mle_recovers_truth_loosely(state):
    spec = md.GeneratorSpec("roy")
    truth = [1.8, 2.0, 0.5, 0.0, 1.0, 1.0, 0.5]
    data = _draw(spec, truth, state.child("d"), 600)
    rep = mle_estimate(spec, md.param_template("roy"), data,
                       OptimizerConfig(max_evals=4000))
    assert rep.flags["infeasible_evaluations"] >= 0
    assert np.max(np.abs(rep.theta.values - np.asarray(truth))) < 0.35


def test_mle_recovers_from_unsupported_start(state):
    # with a sector-2 premium in the truth, a start with a large gamma2 gap
    # leaves real observations unsupported; the safe-neighbor search (premia
    # shrunk to zero) must rescue the fit instead of wandering
    spec = md.GeneratorSpec("roy")
    truth = [2.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0]
    data = _draw(spec, truth, state.child("d"), 400)
    t = md.param_template("roy")
    bad_start = np.array([-3.0, 2.0, 0.0, 4.0, 1.0, 1.0, 0.0])
    rep = mle_estimate(spec, t, data, start=bad_start,
                       opt=OptimizerConfig(max_evals=4000))
    assert np.isfinite(rep.criterion)
    assert rep.theta.values[3] == pytest.approx(1.0, abs=0.5)


# ---------------------------------------------------------------------------
# simulated method of moments


def test_smm_exactly_identified_matches_means(state):
    spec = md.GeneratorSpec("logistic_location")
    data = _draw(spec, [0.5], state.child("d"), 400)
    latent = md.draw_latent(spec, state.child("l"), 400)
    rep = smm_estimate(location_poly_moments(1), data, latent, spec,
                       md.param_template("logistic_location"), "optimal")
    assert rep.criterion < 1e-12
    synth = md.simulate(spec, rep.theta, latent)
    assert float(np.mean(synth.rows)) == pytest.approx(
        float(np.mean(data.rows)), abs=1e-5)


def test_smm_requires_enough_moments(state):
    spec = md.GeneratorSpec("roy")
    data = _draw(spec, [1.8, 2.0, 0.5, 0.0, 1.0, 1.0, 0.5], state.child("d"), 100)
    latent = md.draw_latent(spec, state.child("l"), 100)
    fn = location_poly_moments(3)
    with pytest.raises(ValueError):
        smm_estimate(fn, data, latent, spec, md.param_template("roy"))


def test_smm_duplicated_moments_survive_via_ridge(state):
    spec = md.GeneratorSpec("logistic_location")
    data = _draw(spec, [0.0], state.child("d"), 300)
    latent = md.draw_latent(spec, state.child("l"), 300)

    def dup(rows):
        x = rows[:, 0]
        return np.column_stack([x, x, x**2])
    dup.k = 3
    dup.label = "dup"
    rep = smm_estimate(dup, data, latent, spec,
                       md.param_template("logistic_location"), "optimal")
    assert np.isfinite(rep.criterion)


def test_roy_moment_list_layout():
    rows = np.array([[1.0, 1.0, 2.0, 2.0]])
    m = roy_moments()(rows)
    assert np.allclose(m, [[1.0, 1.0, 2.0, 2.0, 1.0, 4.0, 2.0]])


# ---------------------------------------------------------------------------
# indirect inference


def test_probit_fit_recovers_simple_slope(state):
    gen = state.generator()
    x = gen.normal(1, 1, 3000)
    y = (0.5 + 0.8 * x + gen.normal(0, 1, 3000) >= 0).astype(float)
    beta = fit_probit(y, _poly_basis(x, 1))
    assert beta[0] == pytest.approx(0.5, abs=0.1)
    assert beta[1] == pytest.approx(0.8, abs=0.1)


def test_probit_separation_raises():
    x = np.linspace(-2, 2, 60)
    y = (x >= 0).astype(float)
    with pytest.raises(ValueError, match="separation"):
        fit_probit(y, _poly_basis(x, 1))


def test_ii_score_zero_on_identical_samples(state):
    # simulate real data, then feed the same shocks as the latent draws: at
    # the true theta the synthetic y equals the real y, so the mean score is
    # the real-data FOC, which the probit fit sets to zero
    spec = md.GeneratorSpec("binary_choice", noise="logistic")
    n = 300
    cov = md.draw_covariates(state.child("x"), n)
    latent = md.draw_latent(spec, state.child("e"), n)
    t = md.param_template("binary_choice", [1.0])
    data = md.simulate(spec, t, latent, cov)
    y, x = data.column("y"), data.column("x")
    Z = _poly_basis(x, 3)
    beta = fit_probit(y, Z)
    synth = md.simulate(spec, t, latent, cov)
    sbar = probit_mean_score(synth.column("y"), Z, beta)
    assert np.max(np.abs(sbar)) < 1e-6


def test_ii_criterion_centered_at_truth(state):
    spec = md.GeneratorSpec("binary_choice", noise="logistic")
    data = _draw(spec, [1.0], state.child("d"), 3000)
    latent = md.draw_latent(spec, state.child("l"), 3000)
    t = md.param_template("binary_choice")
    rep = ii_estimate(3, data, latent, spec, t, weighting="optimal",
                      opt=OptimizerConfig(method="grid_then_nelder_mead",
                                          grid=(np.linspace(0.4, 1.8, 15),)))
    assert rep.theta.values[0] == pytest.approx(1.0, abs=0.15)
    assert rep.flags["degree"] == 3


def test_ii_rejects_non_binary_model(state):
    spec = md.GeneratorSpec("logistic_location")
    data = _draw(spec, [0.0], state.child("d"), 50)
    latent = md.draw_latent(spec, state.child("l"), 50)
    with pytest.raises(ValueError):
        ii_estimate(3, data, latent, spec, md.param_template("logistic_location"))


# ---------------------------------------------------------------------------
# adversarial estimator plumbing


def test_adversarial_report_trace_and_seed_flags(state):
    spec = md.GeneratorSpec("logistic_location")
    truth = md.param_template("logistic_location", [0.0])
    data = md.draw_dataset(spec, truth, state.child("d"), 200)
    latent = md.draw_latent(spec, state.child("l"), 200)
    ctx = make_context(spec, truth, data, latent,
                       DiscriminatorSpec("logistic", features="poly3"))
    opt = OptimizerConfig(method="grid_then_nelder_mead",
                          grid=(np.linspace(-1.0, 1.0, 11),))
    rep = adversarial_estimate(ctx, opt, starts=[[0.3]])
    assert rep.trace_sound()
    assert rep.flags["beats_prescan"]
    assert rep.flags["discriminator"] == "logistic:poly3"
    assert abs(rep.theta.values[0]) < 0.5


def test_jittered_starts_deterministic(state):
    a = jittered_starts(np.array([1.0, 2.0]), state.child("j"), 4)
    b = jittered_starts(np.array([1.0, 2.0]), state.child("j"), 4)
    assert len(a) == 4 and np.array_equal(a[0], [1.0, 2.0])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.mark.slow
def test_doubling_m_does_not_inflate_dispersion(state):
    spec = md.GeneratorSpec("logistic_location")
    truth = md.param_template("logistic_location", [0.0])
    sds = {}
    for m in (150, 300):
        ests = []
        for r in range(80):
            st = state.child(("mrep", m, r))
            data = md.draw_dataset(spec, truth, st.child("d"), 150)
            latent = md.draw_latent(spec, st.child("l"), m)
            ctx = make_context(spec, truth, data, latent,
                               DiscriminatorSpec("parametric",
                                                 parametric_id="loc_shift"))
            rep = adversarial_estimate(
                ctx, OptimizerConfig(),
                starts=[[float(np.mean(data.column("x")))]])
            ests.append(rep.theta.values[0])
        sds[m] = np.std(ests, ddof=1)
    # variance factor (1 + n/m) shrinks with m; allow generous MC noise
    assert sds[300] < sds[150] * 1.25
