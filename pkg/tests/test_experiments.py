import json

import numpy as np
import pytest

from advestim.experiments import (
    BINARY_JS_PSEUDO_TRUE,
    EXPERIMENT_NOTES,
    ROY_TRUTH7,
    ROY_TRUTH8,
    Target,
    draw_experiment_data,
    registry,
    run_experiment,
    single_estimate,
    spec_from_dict,
    spec_to_dict,
)
from advestim.randkit import RngState


def test_registry_contains_all_reference_experiments():
    reg = registry()
    assert set(reg) == {
        "logistic_location", "logistic_location_m10x", "normal_misspec",
        "binary_misspec", "smm_curse", "ii_compare", "roy_fixed_rhot",
        "roy_full",
    }
    ll = reg["logistic_location"]
    assert (ll.n, ll.m, ll.reps) == (300, 300, 500)
    assert ll.theta0 == (0.0,)
    assert reg["logistic_location_m10x"].m == 3000
    assert reg["binary_misspec"].theta0 == (BINARY_JS_PSEUDO_TRUE,)
    assert reg["smm_curse"].n == 200 and reg["ii_compare"].n == 200
    assert reg["roy_fixed_rhot"].theta0 == ROY_TRUTH7
    assert reg["roy_full"].theta0 == ROY_TRUTH8
    assert reg["roy_full"].bootstrap["B"] == 500


def test_smm_curse_moments_are_plain_powers():
    from advestim.estimators import location_poly_moments
    spec = registry()["smm_curse"]
    degrees = sorted(int(e.moments[4:]) for e in spec.estimators
                     if e.kind == "smm")
    assert degrees == [3, 7, 11]
    x = np.array([[2.0]])
    assert np.allclose(location_poly_moments(3)(x), [[2.0, 4.0, 8.0]])


def test_roy_full_has_both_logistic_feature_sets():
    spec = registry()["roy_full"]
    feats = [e.disc.features for e in spec.estimators
             if e.kind == "adversarial"]
    assert feats == ["roy_marginal", "roy_cross"]
    mlp = spec.entry("adv_mlp")
    assert mlp.disc.hidden == (10,) and mlp.pre == "roy_cross"
    assert mlp.multistart == 5


def test_every_target_has_provenance_resolving_into_notes():
    for spec in registry().values():
        for t in spec.targets:
            assert t.source in ("reference", "derived", "exact")
            assert t.note in EXPERIMENT_NOTES
            assert t.lo is not None or t.hi is not None


def test_target_note_must_resolve():
    with pytest.raises(ValueError):
        Target("x", 0.0, 1.0, None, "reference", "this text is nowhere")


def test_registry_round_trips_losslessly():
    for spec in registry().values():
        blob = json.dumps(spec_to_dict(spec))
        back = spec_from_dict(json.loads(blob))
        assert back == spec


def test_run_experiment_reduced_power_scorecard():
    res = run_experiment("logistic_location", overrides={"reps": 6}, seed=5)
    assert res.reduced_power
    assert all(row["reduced_power"] for row in res.scorecard)
    assert {row["key"] for row in res.scorecard} == {
        "sqrt_n_sd:mle:0", "sqrt_n_sd:adv_correct:0",
        "sd_ratio:adv_oracle/adv_correct:0"}
    lines = res.scorecard_lines()
    assert len(lines) == 3 and all(l.startswith("[") for l in lines)


def test_run_experiment_scorecard_deterministic():
    a = run_experiment("logistic_location", overrides={"reps": 4}, seed=9)
    b = run_experiment("logistic_location", overrides={"reps": 4}, seed=9,
                       jobs=2)
    assert a.stats == b.stats
    assert a.scorecard == b.scorecard


def test_run_experiment_rejects_unknown_override():
    with pytest.raises(ValueError, match="unknown overrides"):
        run_experiment("logistic_location", overrides={"repz": 3})
    with pytest.raises(KeyError):
        run_experiment("not_an_experiment")


def test_run_experiment_estimator_subset():
    res = run_experiment("logistic_location",
                         overrides={"reps": 4, "estimators": ("mle",)}, seed=2)
    assert set(res.summary.estimates) == {"mle"}


def test_single_estimate_deterministic():
    a, _, _ = single_estimate("normal_misspec", "qmle", seed=3)
    b, _, _ = single_estimate("normal_misspec", "qmle", seed=3)
    assert a.theta.values[0] == b.theta.values[0]


def test_draw_experiment_data_shapes():
    spec = registry()["binary_misspec"]
    data, latent = draw_experiment_data(spec, RngState(4).child("x"))
    assert data.n == 300 and latent.m == 300
    assert data.roles == ("outcome", "covariate")
    spec2 = registry()["logistic_location_m10x"]
    data2, latent2 = draw_experiment_data(spec2, RngState(4).child("y"))
    assert data2.n == 300 and latent2.m == 3000
