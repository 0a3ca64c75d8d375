"""Registry of reference experiments with their exact configurations, truth
values, discriminator rosters, and numeric targets, wired to the Monte Carlo
harness.

Each experiment pairs a structural model with a real-data law (equal under
correct specification, different under misspecification), a roster of
estimators, and a target table whose entries carry provenance notes resolving
into EXPERIMENT_NOTES.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import models
from .discriminators import DiscriminatorSpec, OracleDiscriminator
from .estimators import (
    OptimizerConfig,
    adversarial_estimate,
    ii_estimate,
    jittered_starts,
    location_poly_moments,
    mle_estimate,
    roy_moments,
    roy_start_heuristic,
    smm_estimate,
)
from .inference import (
    McSummary,
    bootstrap_se,
    curvature_fit,
    monte_carlo,
    surface_scan,
)
from .objective import TrainConfig, make_context
from .randkit import RngState

__all__ = [
    "Target",
    "EstimatorEntry",
    "ExperimentSpec",
    "ExperimentResult",
    "registry",
    "run_experiment",
    "single_estimate",
    "draw_experiment_data",
    "make_experiment_context",
    "EXPERIMENT_NOTES",
    "ROY_TRUTH7",
    "ROY_TRUTH8",
    "BINARY_JS_PSEUDO_TRUE",
]

# Truth values used throughout; the location truths are registry constants,
# not model constants (location invariance makes the choice innocuous).
LOCATION_TRUTH = 0.0
BINARY_JS_PSEUDO_TRUE = 1.7443
BINARY_KL_PSEUDO_TRUE = 1.7397
ROY_TRUTH7 = (1.8, 2.0, 0.5, 0.0, 1.0, 1.0, 0.5)
ROY_TRUTH8 = (1.8, 2.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.5)

# bootstrap standard errors (natural scale) of the reference case study,
# used only to size acceptance tolerances for single-draw estimates
ROY_REFERENCE_SE = {
    "logistic": (0.09, 0.11, 0.11, 0.13, 0.09, 0.14, 0.09, 0.12),
    "mlp": (0.10, 0.15, 0.15, 0.18, 0.08, 0.13, 0.14, 0.14),
}

EXPERIMENT_NOTES = """
Reference values targeted by the registry (reported values come from the
simulation study this library reproduces at desk scale; derived values are
recomputed from first principles in-repo).

logistic location, n=m=300, 500 replications:
  reported sqrt(n) sd of MLE 1.73 (exactly sqrt(3), Fisher information 1/3);
  reported sqrt(n) sd of the adversarial estimator 2.45 (exactly sqrt(6));
  oracle and trained correct-spec discriminators agree closely.
logistic location, m=3000:
  reported sqrt(n) se 2.00; exact asymptotic value sqrt(3.3) = 1.817 at n/m=0.1.
bootstrap, n=m=300, B=500:
  reported sqrt(n) bootstrap se 2.29 with the trained correct-spec
  discriminator and 2.52 with the neural-network discriminator.
normal location model on logistic data:
  reported sqrt(n) sd of quasi-MLE 1.81 (exactly pi/sqrt(3));
  reported adversarial asymptotic sd 2.27 (sandwich formula, recomputed 2.2718).
binary choice, probit data fitted by logit:
  Jensen-Shannon pseudo-true slope 1.744 (recomputed 1.7443 by quadrature);
  Kullback-Leibler projection 1.740; smoothing the threshold changes the
  estimator by less than one Monte Carlo standard error.
moment-curse comparison, n=m=200, polynomial moments of degree 3/7/11:
  reported SMM-to-MLE sd ratio about 8 at degree 11; adversarial-to-MLE about 3.
score-generator comparison, n=m=200, polynomial probit of degree 3/7/11:
  indirect inference develops visible location bias at degree 11 while the
  adversarial estimator stays comparable to MLE.
two-sector Roy model, n=m=300:
  truth (1.8, 2, 0.5, 0, 1, 1, rho_t=0, rho_s=0.5), discount 0.9 fixed;
  case-study bootstrap ses as tabulated in ROY_REFERENCE_SE; the marginal
  seven-feature logistic loss leaves rho_t unidentified and adding the
  across-period wage cross moment restores curvature.
"""


@dataclass(frozen=True)
class Target:
    """One numeric acceptance target with provenance."""

    key: str                   # statistic key in the runner's stats dict
    lo: float | None
    hi: float | None
    reference: float | None
    source: str                # reference | derived | exact
    note: str                  # must appear in EXPERIMENT_NOTES

    def __post_init__(self):
        if self.source not in ("reference", "derived", "exact"):
            raise ValueError(f"unknown provenance {self.source!r}")
        if self.note not in EXPERIMENT_NOTES:
            raise ValueError(f"target note not found in notes: {self.note!r}")

    def check(self, value: float) -> bool:
        ok = np.isfinite(value)
        if self.lo is not None:
            ok = ok and value >= self.lo
        if self.hi is not None:
            ok = ok and value <= self.hi
        return bool(ok)


@dataclass(frozen=True)
class EstimatorEntry:
    name: str
    kind: str                          # adversarial | mle | qmle | smm | ii
    disc: DiscriminatorSpec | None = None
    moments: str | None = None
    degree: int | None = None
    weighting: str = "optimal"
    smoothing_h: float = 0.0
    multistart: int = 1
    pre: str | None = None             # feature-map name for pre-estimation
    extra_starts: tuple = ()           # additional pilot estimators ("mle", "smm:roy7")
    scan: tuple | None = None          # (lo, hi, count) coordinate pre-scan
    max_evals: int = 2000

    def __post_init__(self):
        if self.kind not in ("adversarial", "mle", "qmle", "smm", "ii"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")

    def optimizer(self) -> OptimizerConfig:
        if self.scan is None:
            return OptimizerConfig(max_evals=self.max_evals)
        lo, hi, count = self.scan
        return OptimizerConfig(method="grid_then_nelder_mead",
                               grid=(np.linspace(lo, hi, int(count)),),
                               max_evals=self.max_evals)


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    model: models.GeneratorSpec
    theta0: tuple
    real_model: models.GeneratorSpec
    real_theta: tuple
    n: int
    m: int
    reps: int
    estimators: tuple
    targets: tuple = ()
    extra_estimators: tuple = ()
    bootstrap: dict = field(default_factory=dict)
    derived_stats: tuple = ()          # declarative ratio/gap statistics
    notes: str = ""

    def entry(self, name: str) -> EstimatorEntry:
        for e in self.estimators + self.extra_estimators:
            if e.name == name:
                return e
        raise KeyError(f"estimator {name!r} not in experiment {self.id!r}")

    def template(self) -> models.ParamVector:
        return models.param_template(self.model.model, list(self.theta0))


# ---------------------------------------------------------------------------
# registry


def _logistic_location_experiments():
    model = models.GeneratorSpec("logistic_location")
    correct = EstimatorEntry("adv_correct", "adversarial",
                             disc=DiscriminatorSpec("parametric",
                                                    parametric_id="loc_shift"))
    oracle = EstimatorEntry("adv_oracle", "adversarial",
                            disc=DiscriminatorSpec("oracle"))
    mlp = EstimatorEntry("adv_mlp", "adversarial",
                         disc=DiscriminatorSpec("mlp", hidden=(3,)),
                         multistart=3)
    mle = EstimatorEntry("mle", "mle")
    base = ExperimentSpec(
        id="logistic_location",
        model=model, theta0=(LOCATION_TRUTH,),
        real_model=model, real_theta=(LOCATION_TRUTH,),
        n=300, m=300, reps=500,
        estimators=(mle, correct, oracle),
        extra_estimators=(mlp,),
        bootstrap={"B": 500, "entries": ("adv_correct", "adv_mlp")},
        derived_stats=(("sd_ratio", "adv_oracle", "adv_correct", 0),),
        targets=(
            Target("sqrt_n_sd:mle:0", 1.55, 1.95, 1.73, "reference",
                   "reported sqrt(n) sd of MLE 1.73"),
            Target("sqrt_n_sd:adv_correct:0", 2.15, 2.80, 2.45, "reference",
                   "reported sqrt(n) sd of the adversarial estimator 2.45"),
            Target("sd_ratio:adv_oracle/adv_correct:0", 0.9, 1.1, 1.0,
                   "derived",
                   "oracle and trained correct-spec discriminators agree closely"),
        ),
        notes="correct specification; efficiency benchmark",
    )
    m10 = ExperimentSpec(
        id="logistic_location_m10x",
        model=model, theta0=(LOCATION_TRUTH,),
        real_model=model, real_theta=(LOCATION_TRUTH,),
        n=300, m=3000, reps=500,
        estimators=(correct,),
        targets=(
            Target("sqrt_n_sd:adv_correct:0", 1.75, 2.25, 2.00, "reference",
                   "reported sqrt(n) se 2.00"),
        ),
        notes="larger synthetic sample; variance factor 1 + n/m",
    )
    return [base, m10]


def _normal_misspec_experiment():
    model = models.GeneratorSpec("normal_location")
    real = models.GeneratorSpec("logistic_location")
    return ExperimentSpec(
        id="normal_misspec",
        model=model, theta0=(LOCATION_TRUTH,),
        real_model=real, real_theta=(LOCATION_TRUTH,),
        n=300, m=300, reps=500,
        estimators=(
            EstimatorEntry("qmle", "qmle"),
            EstimatorEntry("adv_correct", "adversarial",
                           disc=DiscriminatorSpec("logistic",
                                                  features="normal_misspec")),
            EstimatorEntry("adv_oracle", "adversarial",
                           disc=DiscriminatorSpec("oracle")),
        ),
        targets=(
            Target("sqrt_n_sd:qmle:0", 1.65, 2.00, 1.81, "reference",
                   "reported sqrt(n) sd of quasi-MLE 1.81"),
            Target("sqrt_n_sd:adv_correct:0", 2.00, 2.60, 2.27, "reference",
                   "reported adversarial asymptotic sd 2.27"),
        ),
        notes="location-scale misspecification; sandwich variance",
    )


def _binary_misspec_experiment():
    model = models.GeneratorSpec("binary_choice", noise="logistic")
    real = models.GeneratorSpec("binary_choice", noise="normal")
    disc = DiscriminatorSpec("parametric", parametric_id="binary_shift")
    return ExperimentSpec(
        id="binary_misspec",
        model=model, theta0=(BINARY_JS_PSEUDO_TRUE,),
        real_model=real, real_theta=(1.0,),
        n=300, m=300, reps=500,
        estimators=(
            EstimatorEntry("qmle", "qmle"),
            EstimatorEntry("adv", "adversarial", disc=disc,
                           scan=(0.5, 3.0, 21)),
            EstimatorEntry("adv_smooth", "adversarial", disc=disc,
                           smoothing_h=0.05, scan=(0.5, 3.0, 21)),
        ),
        extra_estimators=(
            EstimatorEntry("adv_mild", "adversarial",
                           disc=DiscriminatorSpec("logistic",
                                                  features="binary_mild"),
                           scan=(0.5, 3.0, 21)),
        ),
        derived_stats=(
            ("bias_z", "adv", BINARY_JS_PSEUDO_TRUE, 0),
            ("gap_z", "adv", "adv_smooth", 0),
        ),
        targets=(
            Target("bias_z:adv:0", None, 2.0, 0.0, "derived",
                   "Jensen-Shannon pseudo-true slope 1.744"),
            Target("gap_z:adv/adv_smooth:0", None, 1.0, 0.0, "reference",
                   "smoothing the threshold changes the\n  estimator by less "
                   "than one Monte Carlo standard error"),
        ),
        notes="probit data fitted by logit; threshold smoothing fix",
    )


def _smm_curse_experiment():
    model = models.GeneratorSpec("logistic_location")
    entries = [EstimatorEntry("mle", "mle")]
    for d in (3, 7, 11):
        entries.append(EstimatorEntry(f"smm{d}", "smm", moments=f"poly{d}"))
        entries.append(EstimatorEntry(
            f"adv{d}", "adversarial",
            disc=DiscriminatorSpec("logistic", features=f"poly{d}")))
    return ExperimentSpec(
        id="smm_curse",
        model=model, theta0=(LOCATION_TRUTH,),
        real_model=model, real_theta=(LOCATION_TRUTH,),
        n=200, m=200, reps=500,
        estimators=tuple(entries),
        derived_stats=(
            ("sd_ratio", "smm11", "mle", 0),
            ("sd_ratio", "adv11", "mle", 0),
            ("sd_ratio", "smm7", "mle", 0),
            ("sd_ratio", "smm3", "mle", 0),
        ),
        targets=(
            Target("sd_ratio:smm11/mle:0", 4.0, None, 8.0, "reference",
                   "reported SMM-to-MLE sd ratio about 8 at degree 11"),
            Target("sd_ratio:adv11/mle:0", None, 3.5, 3.0, "reference",
                   "adversarial-to-MLE about 3"),
        ),
        notes="stacking polynomial moments; curse of dimensionality",
    )


def _ii_compare_experiment():
    model = models.GeneratorSpec("binary_choice", noise="logistic")
    entries = [EstimatorEntry("mle", "mle")]
    for d in (3, 7, 11):
        entries.append(EstimatorEntry(f"ii_unw{d}", "ii", degree=d,
                                      weighting="identity", scan=(0.2, 2.2, 21)))
        entries.append(EstimatorEntry(f"ii_opt{d}", "ii", degree=d,
                                      weighting="optimal", scan=(0.2, 2.2, 21)))
        entries.append(EstimatorEntry(
            f"adv{d}", "adversarial", scan=(0.2, 2.2, 21),
            disc=DiscriminatorSpec("logistic", features=f"binary_interact{d}")))
    return ExperimentSpec(
        id="ii_compare",
        model=model, theta0=(1.0,),
        real_model=model, real_theta=(1.0,),
        n=200, m=200, reps=500,
        estimators=tuple(entries),
        derived_stats=tuple(
            [("bias_z", f"ii_unw{d}", 1.0, 0) for d in (3, 7, 11)]
            + [("bias_z", f"ii_opt{d}", 1.0, 0) for d in (3, 7, 11)]
            + [("bias_z", f"adv{d}", 1.0, 0) for d in (3, 7, 11)]
            + [("sd_ratio", f"adv{d}", "mle", 0) for d in (3, 7, 11)]),
        targets=(
            Target("bias_z:ii_unw11:0", 2.0, None, None, "reference",
                   "indirect inference develops visible location bias at degree 11"),
            Target("bias_z:adv11:0", None, 2.0, None, "reference",
                   "the\n  adversarial estimator stays comparable to MLE"),
            Target("sd_ratio:adv11/mle:0", None, 1.5, None, "derived",
                   "the\n  adversarial estimator stays comparable to MLE"),
        ),
        notes="correctly specified logit; polynomial probit score generator",
    )


def _roy_experiments():
    model7 = models.GeneratorSpec("roy")
    mlp7 = EstimatorEntry("adv_mlp", "adversarial",
                          disc=DiscriminatorSpec("mlp", hidden=(10,)),
                          multistart=5, pre="roy_cross", max_evals=1500,
                          extra_starts=("mle",))
    fixed = ExperimentSpec(
        id="roy_fixed_rhot",
        model=model7, theta0=ROY_TRUTH7,
        real_model=model7, real_theta=ROY_TRUTH7,
        n=300, m=300, reps=500,
        estimators=(
            EstimatorEntry("mle", "mle", max_evals=12000),
            EstimatorEntry("adv_logistic", "adversarial", max_evals=12000,
                           disc=DiscriminatorSpec("logistic",
                                                  features="roy_cross")),
        ),
        extra_estimators=(mlp7,),
        notes="tractable likelihood (rho_t = 0); support-failure analysis",
    )
    model8 = models.GeneratorSpec("roy")
    full = ExperimentSpec(
        id="roy_full",
        model=model8, theta0=ROY_TRUTH8,
        real_model=model8, real_theta=ROY_TRUTH8,
        n=300, m=300, reps=1,
        estimators=(
            EstimatorEntry("adv_logistic7", "adversarial", max_evals=12000,
                           disc=DiscriminatorSpec("logistic",
                                                  features="roy_marginal")),
            EstimatorEntry("adv_logistic8", "adversarial", max_evals=12000,
                           disc=DiscriminatorSpec("logistic",
                                                  features="roy_cross")),
            EstimatorEntry("smm", "smm", moments="roy7", max_evals=12000),
        ),
        extra_estimators=(
            EstimatorEntry("adv_mlp", "adversarial",
                           disc=DiscriminatorSpec("mlp", hidden=(10,)),
                           multistart=5, pre="roy_cross", max_evals=1500,
                           extra_starts=("smm:roy7",)),
        ),
        bootstrap={"B": 500, "entries": ("adv_logistic8", "adv_mlp")},
        notes="case study: two logistic feature sets, then the neural network; "
              "the marginal seven-feature logistic loss leaves rho_t "
              "unidentified",
    )
    return [fixed, full]


def registry() -> dict:
    """All reference experiments keyed by id."""
    specs = (_logistic_location_experiments()
             + [_normal_misspec_experiment(), _binary_misspec_experiment(),
                _smm_curse_experiment(), _ii_compare_experiment()]
             + _roy_experiments())
    return {s.id: s for s in specs}


# ---------------------------------------------------------------------------
# lossless registry serialization (round-trips through the config format)


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = dataclasses.asdict(spec)

    def clean(x):
        if isinstance(x, tuple):
            return [clean(v) for v in x]
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        return x

    return clean(d)


def spec_from_dict(d: dict) -> ExperimentSpec:
    def gen(g):
        return models.GeneratorSpec(**g)

    def disc(x):
        if x is None:
            return None
        x = dict(x)
        x["hidden"] = tuple(x["hidden"])
        return DiscriminatorSpec(**x)

    def entry(e):
        e = dict(e)
        e["disc"] = disc(e["disc"])
        e["scan"] = _tuplify(e.get("scan"))
        e["extra_starts"] = _tuplify(e.get("extra_starts", ()))
        return EstimatorEntry(**e)

    return ExperimentSpec(
        id=d["id"],
        model=gen(d["model"]),
        theta0=tuple(d["theta0"]),
        real_model=gen(d["real_model"]),
        real_theta=tuple(d["real_theta"]),
        n=d["n"], m=d["m"], reps=d["reps"],
        estimators=tuple(entry(e) for e in d["estimators"]),
        targets=tuple(Target(**t) for t in d["targets"]),
        extra_estimators=tuple(entry(e) for e in d["extra_estimators"]),
        bootstrap={k: _tuplify(v) for k, v in d["bootstrap"].items()},
        derived_stats=_tuplify(d["derived_stats"]),
        notes=d["notes"],
    )


# ---------------------------------------------------------------------------
# replication machinery


def draw_experiment_data(spec: ExperimentSpec, state: RngState, n: int | None = None):
    """Real dataset and model latent draws for one replication."""
    n = n or spec.n
    real_template = models.param_template(spec.real_model.model,
                                          list(spec.real_theta))
    data = models.draw_dataset(spec.real_model, real_template,
                               state.child("data"), n)
    m = spec.m if spec.model.model != "binary_choice" else n
    latent = models.draw_latent(spec.model, state.child("latent"), m)
    return data, latent


def make_experiment_context(spec: ExperimentSpec, entry: EstimatorEntry,
                            data, latent, state: RngState, warm_start=False):
    model = spec.model
    if entry.smoothing_h:
        model = dataclasses.replace(model, smoothing_h=entry.smoothing_h)
    oracle = None
    if entry.disc is not None and entry.disc.family == "oracle":
        real_template = models.param_template(spec.real_model.model,
                                              list(spec.real_theta))
        oracle = OracleDiscriminator(spec.real_model, real_template, model)
    return make_context(model, spec.template(), data, latent, entry.disc,
                        TrainConfig(), oracle=oracle, rng=state,
                        warm_start=warm_start)


def _run_entry(spec: ExperimentSpec, entry: EstimatorEntry, data, latent,
               state: RngState, jobs: int = 1):
    opt = entry.optimizer()
    template = spec.template()
    if entry.kind in ("mle", "qmle"):
        return mle_estimate(spec.model, template, data, opt)
    if entry.kind == "smm":
        fn = roy_moments() if entry.moments == "roy7" \
            else location_poly_moments(int(entry.moments[4:]))
        return smm_estimate(fn, data, latent, spec.model, template,
                            weighting=entry.weighting, opt=opt)
    if entry.kind == "ii":
        return ii_estimate(entry.degree, data, latent, spec.model, template,
                           weighting=entry.weighting, opt=opt)
    # adversarial
    starts = None
    if entry.pre is not None:
        pre_entry = EstimatorEntry(name="pre", kind="adversarial",
                                   disc=DiscriminatorSpec("logistic",
                                                          features=entry.pre))
        pre_report = _run_entry(spec, pre_entry, data, latent, state.child("pre"))
        starts = [pre_report.theta.values]
    ctx = make_experiment_context(spec, entry, data, latent, state)
    if starts is None:
        starts = [_experiment_start(spec, data)]
    if entry.multistart > 1:
        starts = jittered_starts(starts[0], state.child("starts"),
                                 entry.multistart - len(entry.extra_starts))
    for name in entry.extra_starts:
        pilot = (EstimatorEntry("pilot", "mle") if name == "mle"
                 else EstimatorEntry("pilot", "smm", moments=name.split(":")[1],
                                     max_evals=entry.max_evals))
        try:
            pr = _run_entry(spec, pilot, data, latent, state.child(("pilot", name)))
            starts.append(pr.theta.values)
        except ValueError:
            pass          # a failed pilot start is skipped, not fatal
    return adversarial_estimate(ctx, opt, starts=starts, jobs=jobs)


def _experiment_start(spec: ExperimentSpec, data):
    if spec.model.model in ("logistic_location", "normal_location"):
        return np.array([float(np.mean(data.column("x")))])
    if spec.model.model == "binary_choice":
        return np.array([1.0])
    return roy_start_heuristic(data, spec.template())


def _replicate(state: RngState, spec: ExperimentSpec, names: tuple):
    data, latent = draw_experiment_data(spec, state)
    out = {}
    for name in names:
        entry = spec.entry(name)
        report = _run_entry(spec, entry, data, latent, state.child(name))
        out[name] = report.theta.values
    return out


def _bootstrap_task(real, latent, state, spec: ExperimentSpec, name: str,
                    start_values):
    entry = spec.entry(name)
    if entry.kind != "adversarial":
        return _run_entry(spec, entry, real, latent, state).theta.values
    starts = [np.asarray(start_values, dtype=float)]
    if entry.pre is not None:
        pre_entry = EstimatorEntry(name="pre", kind="adversarial",
                                   disc=DiscriminatorSpec("logistic",
                                                          features=entry.pre),
                                   scan=entry.scan)
        pre = _run_entry(spec, pre_entry, real, latent, state.child("pre"))
        starts = [pre.theta.values]
    ctx = make_experiment_context(spec, entry, real, latent, state)
    report = adversarial_estimate(ctx, entry.optimizer(), starts=starts)
    return report.theta.values


# ---------------------------------------------------------------------------
# statistics, scorecards, and the experiment runner


def _stats_from_summary(spec: ExperimentSpec, summary: McSummary) -> dict:
    stats = {}
    for name, arr in summary.estimates.items():
        for c in range(arr.shape[1]):
            stats[f"mean:{name}:{c}"] = float(summary.mean[name][c])
            stats[f"sd:{name}:{c}"] = float(summary.sd[name][c])
            stats[f"sqrt_n_sd:{name}:{c}"] = float(summary.sqrt_n_sd[name][c])
            stats[f"mc_se:{name}:{c}"] = float(summary.mc_se(name)[c])
    for ds in spec.derived_stats:
        kind = ds[0]
        if kind == "sd_ratio":
            _, a, b, c = ds
            denom = stats.get(f"sd:{b}:{c}", np.nan)
            stats[f"sd_ratio:{a}/{b}:{c}"] = (
                stats.get(f"sd:{a}:{c}", np.nan) / denom if denom else np.nan)
        elif kind == "bias_z":
            _, a, center, c = ds
            se = stats.get(f"mc_se:{a}:{c}", np.nan)
            stats[f"bias_z:{a}:{c}"] = (
                abs(stats.get(f"mean:{a}:{c}", np.nan) - center) / se
                if se else np.nan)
        elif kind == "gap_z":
            # gap in units of the estimator's own Monte Carlo standard error
            # (its sd across replications): "differs by less than one se"
            _, a, b, c = ds
            se = max(stats.get(f"sd:{a}:{c}", np.nan),
                     stats.get(f"sd:{b}:{c}", np.nan))
            stats[f"gap_z:{a}/{b}:{c}"] = (
                abs(stats.get(f"mean:{a}:{c}", np.nan)
                    - stats.get(f"mean:{b}:{c}", np.nan)) / se if se else np.nan)
        else:
            raise ValueError(f"unknown derived statistic {kind!r}")
    return stats


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    summary: McSummary
    stats: dict
    scorecard: list
    reduced_power: bool
    extras: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(row["passed"] for row in self.scorecard)

    def scorecard_lines(self) -> list:
        out = []
        for row in self.scorecard:
            mark = "PASS" if row["passed"] else "FAIL"
            out.append(f"[{mark}] {self.spec.id} {row['key']} = {row['value']:.4g}"
                       f" (lo={row['lo']}, hi={row['hi']}, ref={row['reference']})")
        return out


def run_experiment(experiment_id: str, overrides: dict | None = None,
                   seed: int = 0, jobs: int = 1) -> ExperimentResult:
    """Execute an experiment's roster, evaluate its targets, and emit a
    pass/fail scorecard.  Overrides never mutate the registry."""
    reg = registry()
    if experiment_id not in reg:
        raise KeyError(f"unknown experiment {experiment_id!r}")
    spec = reg[experiment_id]
    overrides = dict(overrides or {})
    reduced = False
    if "reps" in overrides:
        reps = int(overrides.pop("reps"))
        reduced = reduced or reps < spec.reps
        spec = dataclasses.replace(spec, reps=reps)
    if "n" in overrides or "m" in overrides:
        n = int(overrides.pop("n", spec.n))
        m = int(overrides.pop("m", spec.m))
        reduced = reduced or n < spec.n or m < spec.m
        spec = dataclasses.replace(spec, n=n, m=m)
    names = tuple(overrides.pop("estimators", tuple(e.name for e in spec.estimators)))
    for name in names:
        spec.entry(name)
    if overrides:
        raise ValueError(f"unknown overrides {sorted(overrides)}")
    master = RngState(seed=seed).child(("experiment", spec.id))
    summary = monte_carlo(_replicate, spec.reps, master, spec.n, jobs=jobs,
                          task_args=(spec, names))
    stats = _stats_from_summary(spec, summary)
    scorecard = []
    for target in spec.targets:
        value = stats.get(target.key, np.nan)
        scorecard.append({
            "key": target.key, "value": float(value), "lo": target.lo,
            "hi": target.hi, "reference": target.reference,
            "source": target.source,
            "passed": target.check(value),
            "reduced_power": reduced,
        })
    return ExperimentResult(spec=spec, summary=summary, stats=stats,
                            scorecard=scorecard, reduced_power=reduced)


def single_estimate(experiment_id: str, estimator: str, seed: int = 0,
                    jobs: int = 1):
    """One seeded draw of an experiment's data plus one estimator run
    (the case-study path, as opposed to the Monte Carlo path).  ``jobs``
    parallelizes multi-start optimizations."""
    spec = registry()[experiment_id]
    state = RngState(seed=seed).child(("single", spec.id))
    data, latent = draw_experiment_data(spec, state)
    entry = spec.entry(estimator)
    report = _run_entry(spec, entry, data, latent, state.child(estimator),
                        jobs=jobs)
    return report, data, latent


def experiment_bootstrap(experiment_id: str, estimator: str, B: int,
                         seed: int = 0, jobs: int = 1):
    """Bootstrap one estimator of one experiment: resample the data and the
    latent draws, keep the discriminator specification frozen."""
    spec = registry()[experiment_id]
    state = RngState(seed=seed).child(("bootstrap", spec.id))
    data, latent = draw_experiment_data(spec, state)
    point, _, _ = single_estimate(experiment_id, estimator, seed=seed)
    draws, se, failures = bootstrap_se(
        data, latent, _BootstrapEstimator(spec, estimator, point.theta.values),
        B, state.child("draws"), jobs=jobs)
    return {"point": point.theta.values, "draws": draws, "se": se,
            "sqrt_n_se": np.sqrt(spec.n) * se, "failures": failures}


class _BootstrapEstimator:
    """Picklable closure for bootstrap_se."""

    def __init__(self, spec: ExperimentSpec, name: str, start_values):
        self.spec = spec
        self.name = name
        self.start = np.asarray(start_values, dtype=float)

    def __call__(self, real, latent, state):
        return _bootstrap_task(real, latent, state, self.spec, self.name,
                               self.start)


def identification_scan(experiment_id: str, estimator: str, coordinate: str,
                        grid, seed: int = 0, at=None):
    """Profiled-loss scan along one coordinate (a flat scan signals an
    identification failure for that feature set)."""
    spec = registry()[experiment_id]
    state = RngState(seed=seed).child(("scan", spec.id))
    data, latent = draw_experiment_data(spec, state)
    entry = spec.entry(estimator)
    ctx = make_experiment_context(spec, entry, data, latent, state)
    if at is not None:
        ctx.template = ctx.template.with_values(np.asarray(at, dtype=float))
    surface = surface_scan(ctx, coordinate, grid,
                           include_loglik=spec.model.model != "binary_choice")
    return surface, curvature_fit(surface)
