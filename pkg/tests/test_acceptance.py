"""End-to-end acceptance gate.

One test per numbered criterion; each prints a [PASS]/[FAIL] line per clause
before asserting, so a full run yields a scorecard.  Monte Carlo criteria use
fixed master seeds, and runtime budgets stated for 8 cores are scaled by the
actual worker count.
"""

import time

import numpy as np
import pytest

from advestim import models as md
from advestim.discriminators import (
    DiscriminatorSpec,
    MlpFamily,
    OracleDiscriminator,
    poly_features,
    LogisticFamily,
)
from advestim.estimators import (
    OptimizerConfig,
    adversarial_estimate,
    location_poly_moments,
    smm_estimate,
)
from advestim.experiments import (
    ROY_REFERENCE_SE,
    ROY_TRUTH7,
    experiment_bootstrap,
    registry,
    draw_experiment_data,
    make_experiment_context,
    run_experiment,
    single_estimate,
)
from advestim.inference import (
    asymptotic_variance,
    curvature_fit,
    js_pseudo_true,
    misspec_diagnostics,
    orthogonality_gap,
    surface_scan,
)
from advestim.objective import (
    TWO_LOG_HALF,
    TrainConfig,
    cross_entropy_loss,
    make_context,
    profiled_loss,
    train_index_family,
)
from advestim.randkit import (
    RngState,
    standard_logistic_cdf,
    standard_logistic_quantile,
)

pytestmark = pytest.mark.acceptance

SEED = 11


def _report(lines):
    print()
    failed = []
    for name, ok, detail in lines:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        if not ok:
            failed.append(name)
    assert not failed, f"criteria failed: {failed}"


def _budget(seconds_on_8_cores, jobs):
    return seconds_on_8_cores * max(1.0, 8.0 / jobs)


# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_logistic_location_efficiency(jobs):
    t0 = time.time()
    res = run_experiment("logistic_location", seed=SEED, jobs=jobs)
    elapsed = time.time() - t0
    s = res.stats
    lines = [
        ("1a sqrt(n)·sd MLE in [1.55, 1.95]",
         1.55 <= s["sqrt_n_sd:mle:0"] <= 1.95,
         f"{s['sqrt_n_sd:mle:0']:.3f} (target 1.73)"),
        ("1b sqrt(n)·sd adversarial in [2.15, 2.80]",
         2.15 <= s["sqrt_n_sd:adv_correct:0"] <= 2.80,
         f"{s['sqrt_n_sd:adv_correct:0']:.3f} (target 2.45)"),
        ("1c oracle within 10% of correct-spec",
         0.9 <= s["sd_ratio:adv_oracle/adv_correct:0"] <= 1.1,
         f"ratio {s['sd_ratio:adv_oracle/adv_correct:0']:.3f}"),
        ("1d runtime <= 5 min on 8 cores",
         elapsed <= _budget(300, jobs),
         f"{elapsed:.0f}s at {jobs} workers (budget {_budget(300, jobs):.0f}s)"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_2_larger_synthetic_sample(jobs):
    res = run_experiment("logistic_location_m10x", seed=SEED, jobs=jobs)
    v = res.stats["sqrt_n_sd:adv_correct:0"]
    _report([("2 m=3000 sqrt(n)·se in [1.75, 2.25]",
              1.75 <= v <= 2.25, f"{v:.3f} (reported 2.00, exact 1.82)")])


@pytest.mark.slow
def test_criterion_3_bootstrap(jobs):
    t0 = time.time()
    logi = experiment_bootstrap("logistic_location", "adv_correct", B=500,
                                seed=SEED, jobs=jobs)
    mlp = experiment_bootstrap("logistic_location", "adv_mlp", B=500,
                               seed=SEED, jobs=jobs)
    elapsed = time.time() - t0
    lines = [
        ("3a logistic-discriminator bootstrap sqrt(n)·se in [2.0, 2.9]",
         2.0 <= logi["sqrt_n_se"][0] <= 2.9,
         f"{logi['sqrt_n_se'][0]:.3f} (reported 2.29)"),
        ("3b mlp-discriminator bootstrap sqrt(n)·se in [2.1, 3.0]",
         2.1 <= mlp["sqrt_n_se"][0] <= 3.0,
         f"{mlp['sqrt_n_se'][0]:.3f} (reported 2.52)"),
        ("3c runtime <= 20 min on 8 cores",
         elapsed <= _budget(1200, jobs),
         f"{elapsed:.0f}s at {jobs} workers (budget {_budget(1200, jobs):.0f}s)"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_4_normal_misspecification(jobs):
    res = run_experiment("normal_misspec", seed=SEED, jobs=jobs)
    s = res.stats
    av = asymptotic_variance("normal_misspec", 1.0)
    lines = [
        ("4a sqrt(n)·sd quasi-MLE in [1.65, 2.00]",
         1.65 <= s["sqrt_n_sd:qmle:0"] <= 2.00,
         f"{s['sqrt_n_sd:qmle:0']:.3f} (pi/sqrt(3) = 1.814)"),
        ("4b sqrt(n)·sd adversarial in [2.00, 2.60]",
         2.00 <= s["sqrt_n_sd:adv_correct:0"] <= 2.60,
         f"{s['sqrt_n_sd:adv_correct:0']:.3f} (reported 2.27)"),
        ("4c analytic quasi-MLE sd to 3 digits",
         abs(av["sd_mle"] - 1.81) <= 0.005,
         f"{av['sd_mle']:.4f} vs 1.81"),
        ("4d analytic sandwich sd to 3 digits",
         abs(av["sd_adversarial"] - 2.27) <= 0.005,
         f"{av['sd_adversarial']:.4f} vs 2.27"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_5_pseudo_true_parameter(jobs):
    theta_js = js_pseudo_true()
    res = run_experiment("binary_misspec", seed=SEED, jobs=jobs)
    s = res.stats
    bias = abs(s["mean:adv:0"] - theta_js)
    mc_se = s["mc_se:adv:0"]
    gap_sd = s["gap_z:adv/adv_smooth:0"]
    lines = [
        ("5a JS-projection quadrature oracle = 1.744 ± 0.005",
         abs(theta_js - 1.744) <= 0.005, f"{theta_js:.4f}"),
        ("5b MC mean within 2 MC se of the projection",
         bias <= 2.0 * mc_se,
         f"|{s['mean:adv:0']:.4f} - {theta_js:.4f}| = {bias:.4f} vs "
         f"2·{mc_se:.4f}"),
        ("5c smoothed vs unsmoothed gap < 1 MC se",
         gap_sd < 1.0, f"gap {gap_sd:.3f} estimator-se units"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_6_moment_curse(jobs):
    res = run_experiment("smm_curse", seed=SEED, jobs=jobs)
    s = res.stats
    mono = (s["sd:smm3:0"] < s["sd:smm7:0"] < s["sd:smm11:0"])
    lines = [
        ("6a SMM/MLE sd ratio at d=11 >= 4",
         s["sd_ratio:smm11/mle:0"] >= 4.0,
         f"{s['sd_ratio:smm11/mle:0']:.2f} (reported ~8)"),
        ("6b adversarial/MLE sd ratio at d=11 <= 3.5",
         s["sd_ratio:adv11/mle:0"] <= 3.5,
         f"{s['sd_ratio:adv11/mle:0']:.2f} (reported ~3)"),
        ("6c SMM deteriorates monotonically over d in {3,7,11}",
         mono,
         f"sd: {s['sd:smm3:0']:.3f} < {s['sd:smm7:0']:.3f} < {s['sd:smm11:0']:.3f}"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_7_indirect_inference(jobs):
    res = run_experiment("ii_compare", seed=SEED, jobs=jobs)
    s = res.stats
    ratios = {d: s[f"sd_ratio:adv{d}/mle:0"] for d in (3, 7, 11)}
    lines = [
        ("7a II location bias present at d=11 (> 2 MC se)",
         s["bias_z:ii_unw11:0"] > 2.0,
         f"unweighted z = {s['bias_z:ii_unw11:0']:.1f}, "
         f"optimal z = {s['bias_z:ii_opt11:0']:.1f}"),
        ("7b adversarial bias at d=11 within 2 MC se",
         s["bias_z:adv11:0"] <= 2.0,
         f"z = {s['bias_z:adv11:0']:.1f} "
         "(unattainable at n=200: the exact criterion minimizer carries "
         "finite-sample bias ~5 MC se, as does MLE itself; see notes)"),
        ("7c adversarial sd <= 1.5x MLE at every d",
         all(r <= 1.5 for r in ratios.values()),
         "ratios " + ", ".join(f"d={d}: {r:.2f}" for d, r in ratios.items())
         + " (asymptotic ratio 1.414; finite-sample excess at n=200)"),
    ]
    _report(lines)


@pytest.mark.slow
def test_criterion_8_roy_model(jobs):
    lines = []
    # 8a: neural-network estimate near the truth, coordinate-wise
    rep, data, latent = single_estimate("roy_fixed_rhot", "adv_mlp", seed=SEED,
                                       jobs=jobs)
    truth = np.asarray(ROY_TRUTH7)
    ref_se = np.asarray(ROY_REFERENCE_SE["mlp"][:6] + ROY_REFERENCE_SE["mlp"][7:])
    tol = np.maximum(2.0 * ref_se, 0.1)
    err = np.abs(rep.theta.values - truth)
    lines.append((
        "8a mlp-discriminator estimate within max(2 ref se, 0.1) of truth",
        bool(np.all(err <= tol)),
        "errors " + np.array2string(np.round(err, 3)) + " vs tol "
        + np.array2string(np.round(tol, 2)),
    ))
    # 8b: profiled loss finite across a grid where the likelihood is infinite
    spec = registry()["roy_fixed_rhot"]
    state = RngState(SEED).child(("single", "roy_fixed_rhot"))
    ctx = make_experiment_context(spec, spec.entry("adv_logistic"), data,
                                  latent, state.child("scan"))
    grid = np.linspace(1.4, 2.6, 25)
    surf = surface_scan(ctx, "mu1", grid, include_loglik=True)
    n_inf = int(np.sum(~np.isfinite(surf.loglik)))
    lines.append((
        "8b profiled loss finite where the likelihood is infinite",
        bool(np.all(np.isfinite(surf.profiled)) and n_inf >= 1),
        f"{n_inf} of {grid.size} grid nodes have infinite loglik; "
        f"profiled loss spans [{surf.profiled.min():.3f}, {surf.profiled.max():.3f}]",
    ))
    # 8c: feature choice governs identification of rho_t in the full model
    fspec = registry()["roy_full"]
    fstate = RngState(SEED).child(("case", "roy_full"))
    fdata, flatent = draw_experiment_data(fspec, fstate)
    from advestim.experiments import _run_entry
    rep8 = _run_entry(fspec, fspec.entry("adv_logistic8"), fdata, flatent,
                      fstate.child("e8"))
    at = rep8.theta.values
    curv = {}
    for label, entry in (("seven", "adv_logistic7"), ("eight", "adv_logistic8")):
        sctx = make_experiment_context(fspec, fspec.entry(entry), fdata,
                                       flatent, fstate.child(("scan", label)))
        sctx.template = sctx.template.with_values(at)
        s = surface_scan(sctx, "rho_t", at[6] + np.linspace(-0.45, 0.45, 19),
                         include_loglik=False)
        curv[label] = curvature_fit(s)["coefficients"]["profiled"]
    threshold = 0.05
    lines.append((
        "8c marginal features leave rho_t unidentified; cross moment restores it",
        curv["seven"] < threshold <= curv["eight"],
        f"curvature 7-feature {curv['seven']:.4f} < {threshold} <= "
        f"8-feature {curv['eight']:.4f}",
    ))
    _report(lines)


@pytest.mark.slow
def test_criterion_9_curvature_matching():
    spec = md.GeneratorSpec("logistic_location")
    truth = md.param_template("logistic_location", [0.0])
    ratios = []
    for s in range(20):
        st = RngState(5000 + s)
        data = md.draw_dataset(spec, truth, st.child("d"), 300)
        latent = md.draw_latent(spec, st.child("l"), 300)
        ctx = make_context(spec, truth, data, latent,
                           DiscriminatorSpec("parametric",
                                             parametric_id="loc_shift"))
        h = 3.0 / np.sqrt(300)
        surf = surface_scan(ctx, "theta", np.linspace(-h, h, 21))
        fit = curvature_fit(surf)
        ratios.append(fit["coefficients"]["profiled"]
                      / fit["coefficients"]["loglik"])
    mean_ratio = float(np.mean(ratios))
    _report([("9 curvature ratio profiled/loglik in [0.75, 1.25] over 20 seeds",
              0.75 <= mean_ratio <= 1.25,
              f"mean {mean_ratio:.3f}, range [{min(ratios):.3f}, {max(ratios):.3f}]")])


@pytest.mark.slow
def test_criterion_10_smm_equivalence():
    spec = md.GeneratorSpec("logistic_location")
    truth = md.param_template("logistic_location", [0.0])
    gaps, smms = [], []
    for r in range(200):
        st = RngState(777000 + r)
        data = md.draw_dataset(spec, truth, st.child("d"), 1000)
        latent = md.draw_latent(spec, st.child("l"), 1000)
        start = [float(np.mean(data.column("x")))]
        ctx = make_context(spec, truth, data, latent,
                           DiscriminatorSpec("logistic", features="poly3"))
        a = adversarial_estimate(ctx, OptimizerConfig(),
                                 starts=[start]).theta.values[0]
        s = smm_estimate(location_poly_moments(3), data, latent, spec, truth,
                         "optimal", OptimizerConfig(), start=start).theta.values[0]
        gaps.append(abs(a - s))
        smms.append(s)
    mean_gap = float(np.mean(gaps))
    bound = 0.5 * float(np.std(smms, ddof=1))
    _report([("10 mean |adv - smm| < 0.5 sd(smm) at n=m=1000, d=3, R=200",
              mean_gap < bound, f"{mean_gap:.5f} < {bound:.5f}")])


def test_criterion_11_property_suite(state):
    t0 = time.time()
    lines = []

    # loss bounds and the constant-discriminator value
    lv = cross_entropy_loss(np.full(4, 0.5), np.full(6, 0.5))
    lines.append(("11a D=1/2 loss exactly 2 log(1/2)",
                  lv.value == TWO_LOG_HALF, f"{lv.value:.12f}"))
    gen = state.generator()
    bounded = True
    spec = md.GeneratorSpec("logistic_location")
    truth = md.param_template("logistic_location", [0.0])
    data = md.draw_dataset(spec, truth, state.child("d"), 200)
    latent = md.draw_latent(spec, state.child("l"), 200)
    ctx = make_context(spec, truth, data, latent,
                       DiscriminatorSpec("logistic", features="poly3"))
    for t in (-1.5, -0.3, 0.0, 0.8, 2.0):
        v = profiled_loss([t], ctx).value
        bounded &= TWO_LOG_HALF - 1e-11 <= v <= 0.0
    lines.append(("11b trained loss within [2 log(1/2) - slack, 0]", bounded, ""))

    # oracle equals the density ratio
    orc = OracleDiscriminator(spec, truth, spec)
    worst = 0.0
    for _ in range(1000):
        th = truth.with_values(gen.uniform(-2, 2, 1))
        x = gen.normal(0, 2, (1, 1))
        d = orc.prob(th, x)[0]
        p0 = np.exp(md.log_density(spec, truth, x))[0]
        pt = np.exp(md.log_density(spec, th, x))[0]
        worst = max(worst, abs(d - p0 / (p0 + pt)))
    lines.append(("11c oracle = density ratio to 1e-10", worst < 1e-10,
                  f"max gap {worst:.2e}"))

    # mlp backprop vs central finite differences
    mlp = MlpFamily(2, (4,))
    w = mlp.init_weights(state.child("w"))
    xr = mlp.prep(gen.normal(0, 1, (5, 2)))
    xs = mlp.prep(gen.normal(0.4, 1, (5, 2)))
    _, g = mlp.loss_and_grad(w, xr, xs, 0.2, 0.2)
    fd = np.zeros_like(w)
    for i in range(w.size):
        up, dn = w.copy(), w.copy()
        up[i] += 1e-5
        dn[i] -= 1e-5
        fd[i] = (mlp.loss(up, xr, xs, 0.2, 0.2)
                 - mlp.loss(dn, xr, xs, 0.2, 0.2)) / 2e-5
    rel = np.max(np.abs(g - fd)) / max(1e-12, np.max(np.abs(fd)))
    lines.append(("11d mlp backprop vs finite differences rel err < 1e-5",
                  rel < 1e-5, f"{rel:.2e}"))

    # logistic training FOC residual
    fam = LogisticFamily(poly_features(3))
    res = train_index_family(fam, fam.prep(data.rows),
                             fam.prep(gen.normal(0.2, 1, (200, 1))),
                             TrainConfig())
    lines.append(("11e logistic FOC residual <= tolerance",
                  res.grad_norm <= TrainConfig().tol, f"{res.grad_norm:.2e}"))

    # determinism: bit-identical reruns of an estimate
    r1 = run_experiment("logistic_location", overrides={"reps": 3}, seed=4)
    r2 = run_experiment("logistic_location", overrides={"reps": 3}, seed=4,
                        jobs=2)
    same = all(np.array_equal(r1.summary.estimates[k], r2.summary.estimates[k])
               for k in r1.summary.estimates)
    lines.append(("11f bit-identical reruns (serial vs parallel)", same, ""))

    # quantile / cdf round trips
    u = np.arange(0.01, 0.995, 0.01)
    rt = np.max(np.abs(standard_logistic_cdf(standard_logistic_quantile(u)) - u))
    lines.append(("11g quantile/cdf round trip to 1e-12", rt < 1e-12,
                  f"{rt:.2e}"))

    # variance-formula reduction under correct specification
    worst_red = 0.0
    for nm in (1.0, 0.5, 0.1):
        red = asymptotic_variance("logistic_location", nm, substitute_half=True)
        worst_red = max(worst_red,
                        abs(red["sandwich"] - (1 + nm) / red["fisher"]))
    lines.append(("11h sandwich reduces to (1+n/m)/I to 1e-6",
                  worst_red < 1e-6, f"max gap {worst_red:.2e}"))

    # tau flatness for the probit-misspecified logit diagnostic
    diag = misspec_diagnostics("binary_misspec", np.linspace(-2, 2, 9),
                               n=300, m=300, state=state.child("diag"))
    ref = misspec_diagnostics("normal_misspec", np.linspace(-2, 2, 9),
                              n=300, m=300, state=state.child("diag"))
    flat = diag.analytic_slope == 0.0 and (
        abs(diag.fitted_slope) < 0.25 * max(abs(ref.analytic_slope), 0.05))
    lines.append(("11i tau = 0 and near-flat curve for the misspecified logit",
                  flat,
                  f"fitted {diag.fitted_slope:.4f} vs misspec-location slope "
                  f"{ref.analytic_slope:.4f}"))

    # orthogonality witness on seeded data
    n = 300
    st = state.child("orth")
    data_o = md.draw_dataset(spec, truth, st.child("d"), n)
    latent_o = md.draw_latent(spec, st.child("l"), n)
    ctx_hat = make_context(spec, truth, data_o, latent_o,
                           DiscriminatorSpec("parametric",
                                             parametric_id="loc_shift"))
    ctx_orc = make_context(spec, truth, data_o, latent_o,
                           DiscriminatorSpec("oracle"), oracle=orc)
    h = 2.0 / np.sqrt(n)
    gap = orthogonality_gap(ctx_hat, ctx_orc, [0.0], np.linspace(-h, h, 9))
    lines.append(("11j orthogonality witness below 0.5/n", gap < 0.5 / n,
                  f"{gap:.2e} vs {0.5 / n:.2e}"))

    elapsed = time.time() - t0
    lines.append(("11k property suite under 60 s", elapsed < 60.0,
                  f"{elapsed:.1f}s"))
    _report(lines)
