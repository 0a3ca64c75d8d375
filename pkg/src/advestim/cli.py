"""Command-line front end.

Subcommands: estimate, surface, mc, bootstrap, run-experiment,
list-experiments.  All file outputs are written atomically (temp file plus
rename) with 17-significant-digit CSV numbers, so runs are byte-reproducible
and doubles round-trip losslessly.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__, models
from .config import ConfigError, RunConfig, emit_config, parse_config
from .discriminators import DiscriminatorSpec, OracleDiscriminator
from .estimators import (
    OptimizerConfig,
    adversarial_estimate,
    ii_estimate,
    jittered_starts,
    location_poly_moments,
    mle_estimate,
    roy_moments,
    smm_estimate,
)
from .experiments import (
    experiment_bootstrap,
    identification_scan,
    registry,
    run_experiment,
    single_estimate,
)
from .inference import monte_carlo
from .objective import TrainConfig, make_context
from .randkit import RngState

_FMT = "%.17g"


def _atomic_write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-adv-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return _FMT % v
    return str(v)


def _write_csv(path: str, header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_csv_cell(c) for c in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"cannot serialize {type(o)!r}")


def _write_json(path: str, payload: dict):
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True,
                                   default=_json_default) + "\n")


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, count = text.split(":")
        return np.linspace(float(lo), float(hi), int(count))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"grid must be lo:hi:count, got {text!r}") from exc


# ---------------------------------------------------------------------------
# config-driven single estimation


def _model_from_config(cfg: RunConfig) -> models.GeneratorSpec:
    return models.GeneratorSpec(
        model=cfg["model.name"],
        noise=cfg["model.noise"],
        smoothing_h=cfg["model.smoothing.h"],
        roy_nodes=cfg["model.roy.quadrature_nodes"],
        roy_conditional=cfg["model.roy.conditional_expectations"],
    )


def _disc_from_config(cfg: RunConfig) -> DiscriminatorSpec:
    return DiscriminatorSpec(
        family=cfg["discriminator.family"],
        features=cfg["discriminator.features"],
        parametric_id=cfg["discriminator.parametric_id"],
        hidden=tuple(cfg["discriminator.hidden"]),
        activation=cfg["discriminator.activation"],
    )


def _load_dataset_csv(path: str, model: str) -> models.Dataset:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        cols = tuple(fh.readline().strip().split(","))
    roles = tuple("covariate" if c == "x" and model == "binary_choice"
                  else "outcome" for c in cols)
    return models.Dataset(rows=arr, columns=cols, roles=roles)


def run_estimate(cfg: RunConfig) -> dict:
    model = _model_from_config(cfg)
    seed = cfg["seed"]
    state = RngState(seed=seed).child("estimate")
    template = models.param_template(model.model, cfg["params.start"])
    if cfg["data.path"]:
        data = _load_dataset_csv(cfg["data.path"], model.model)
    else:
        truth = cfg["data.truth"]
        if truth is None:
            raise ConfigError("config needs data.truth or data.path")
        real_name = cfg["data.real_model"] or model.model
        real_model = models.GeneratorSpec(real_name, noise=cfg["data.real_noise"])
        real_template = models.param_template(real_name, truth)
        data = models.draw_dataset(real_model, real_template,
                                   state.child("data"), cfg["n"])
    m = cfg["m"] if model.model != "binary_choice" else data.n
    latent = models.draw_latent(model, state.child("latent"), m)
    start = np.asarray(cfg["params.start"] if cfg["params.start"] is not None
                       else template.values, dtype=float)
    opt = OptimizerConfig(
        method=cfg["opt.method"], scale=cfg["opt.scale"], ftol=cfg["opt.ftol"],
        xtol=cfg["opt.xtol"], max_evals=cfg["opt.max_evals"],
        grid=tuple(np.asarray(g, dtype=float) if g is not None else None
                   for g in (cfg["opt.grid"] or [])),
    )
    method = cfg["method"]
    if method == "mle":
        report = mle_estimate(model, template, data, opt, start=start)
    elif method == "smm":
        name = cfg["smm.moments"]
        fn = roy_moments() if name == "roy7" else location_poly_moments(int(name[4:]))
        report = smm_estimate(fn, data, latent, model, template,
                              weighting=cfg["smm.weighting"], opt=opt, start=start)
    elif method == "ii":
        report = ii_estimate(cfg["ii.degree"], data, latent, model, template,
                             weighting=cfg["ii.weighting"], opt=opt, start=start)
    else:
        disc = _disc_from_config(cfg)
        train = TrainConfig(optimizer=cfg["train.optimizer"],
                            tol=cfg["train.tol"], ridge=cfg["train.ridge"],
                            lr=cfg["train.lr"], mlp_iters=cfg["train.iters"])
        oracle = None
        if disc.family == "oracle":
            truth = cfg["data.truth"]
            real_name = cfg["data.real_model"] or model.model
            real_model = models.GeneratorSpec(real_name,
                                              noise=cfg["data.real_noise"])
            oracle = OracleDiscriminator(
                real_model, models.param_template(real_name, truth), model)
        ctx = make_context(model, template, data, latent, disc, train,
                           oracle=oracle, rng=state)
        starts = [start]
        if cfg["opt.multistart"] > 1:
            starts = jittered_starts(start, state.child("starts"),
                                     cfg["opt.multistart"])
        report = adversarial_estimate(ctx, opt, starts=starts)
    return {
        "version": __version__,
        "config": cfg.as_dict(),
        "method": report.method,
        "theta_names": list(report.theta.names),
        "theta": report.theta.values.tolist(),
        "criterion": report.criterion,
        "evaluations": report.evaluations,
        "converged": report.converged,
        "flags": {k: v for k, v in report.flags.items() if k != "prescan_nodes"},
    }


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_list_experiments(args) -> int:
    for eid, spec in sorted(registry().items()):
        names = ",".join(e.name for e in spec.estimators)
        print(f"{eid}: n={spec.n} m={spec.m} reps={spec.reps} "
              f"estimators=[{names}]")
    return 0


def _cmd_estimate(args) -> int:
    with open(args.config) as fh:
        cfg = parse_config(fh.read())
    payload = run_estimate(cfg)
    out = args.out or os.path.join(cfg["output.dir"], "report.json")
    _write_json(out, payload)
    print(f"wrote {out}")
    return 0


def _cmd_surface(args) -> int:
    grid = args.grid
    surface, fit = identification_scan(args.experiment, args.estimator
                                       or _first_adversarial(args.experiment),
                                       args.coord, grid, seed=args.seed)
    rows = []
    for j, g in enumerate(surface.grid):
        rows.append((
            g,
            surface.profiled[j],
            surface.oracle[j] if surface.oracle is not None else float("nan"),
            surface.loglik[j] if surface.loglik is not None else float("nan"),
            int(bool(surface.supported[j])) if surface.supported is not None else 1,
        ))
    _write_csv(args.out, ("theta", "loss", "oracle_loss", "loglik", "supported"),
               rows)
    print(f"wrote {args.out} ({len(rows)} rows); curvature "
          f"{fit['coefficients'].get('profiled'):.6g}")
    return 0


def _first_adversarial(experiment_id: str) -> str:
    spec = registry()[experiment_id]
    for e in spec.estimators + spec.extra_estimators:
        if e.kind == "adversarial":
            return e.name
    raise ValueError(f"experiment {experiment_id!r} has no adversarial entry")


def _cmd_mc(args) -> int:
    overrides = {}
    if args.reps:
        overrides["reps"] = args.reps
    result = run_experiment(args.experiment, overrides=overrides,
                            seed=args.seed, jobs=args.jobs)
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    summary = {
        "version": __version__,
        "experiment": args.experiment,
        "seed": args.seed,
        "reps": result.spec.reps,
        "n": result.spec.n,
        "m": result.spec.m,
        "reduced_power": result.reduced_power,
        "stats": result.stats,
        "scorecard": result.scorecard,
        "failures": result.summary.failures,
    }
    _write_json(os.path.join(outdir, "mc_summary.json"), summary)
    rows = []
    for name in sorted(result.summary.estimates):
        arr = result.summary.estimates[name]
        for r in range(arr.shape[0]):
            for c in range(arr.shape[1]):
                rows.append((name, r, c, arr[r, c]))
    _write_csv(os.path.join(outdir, "draws.csv"),
               ("method", "replication", "coordinate", "value"), rows)
    for line in result.scorecard_lines():
        print(line)
    print(f"wrote {outdir}/mc_summary.json and {outdir}/draws.csv")
    return 0


def _cmd_bootstrap(args) -> int:
    res = experiment_bootstrap(args.experiment, args.estimator
                               or _first_adversarial(args.experiment),
                               B=args.boot, seed=args.seed, jobs=args.jobs)
    payload = {
        "version": __version__,
        "experiment": args.experiment,
        "B": args.boot,
        "seed": args.seed,
        "point": res["point"],
        "se": res["se"],
        "sqrt_n_se": res["sqrt_n_se"],
        "failures": res["failures"],
    }
    _write_json(args.out, payload)
    print(f"wrote {args.out}: sqrt(n) se = "
          + " ".join(_FMT % v for v in np.atleast_1d(res["sqrt_n_se"])))
    return 0


def _cmd_run_experiment(args) -> int:
    overrides = {}
    for kv in args.override or []:
        key, _, value = kv.partition("=")
        if not value:
            raise ConfigError(f"override must be key=value, got {kv!r}")
        if key == "estimators":
            overrides[key] = tuple(value.split(","))
        else:
            overrides[key] = int(value)
    result = run_experiment(args.experiment, overrides=overrides,
                            seed=args.seed, jobs=args.jobs)
    for line in result.scorecard_lines():
        print(line)
    if result.reduced_power:
        print(f"[reduced-power] overrides changed the registered scale")
    if args.out:
        _write_json(args.out, {
            "version": __version__,
            "experiment": args.experiment,
            "seed": args.seed,
            "stats": result.stats,
            "scorecard": result.scorecard,
            "reduced_power": result.reduced_power,
        })
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="advestim",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("list-experiments", help="print the registry")
    sp.set_defaults(fn=_cmd_list_experiments)

    sp = sub.add_parser("estimate", help="one estimation run from a config file")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=_cmd_estimate)

    sp = sub.add_parser("surface", help="profiled-loss scan along a coordinate")
    sp.add_argument("--experiment", required=True)
    sp.add_argument("--estimator")
    sp.add_argument("--coord", required=True)
    sp.add_argument("--grid", required=True, type=_parse_grid)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="surface.csv")
    sp.set_defaults(fn=_cmd_surface)

    sp = sub.add_parser("mc", help="Monte Carlo replications of an experiment")
    sp.add_argument("--experiment", required=True)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--jobs", type=int,
                    default=int(os.environ.get("ADVESTIM_JOBS", "1")))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".")
    sp.set_defaults(fn=_cmd_mc)

    sp = sub.add_parser("bootstrap", help="bootstrap standard errors")
    sp.add_argument("--experiment", required=True)
    sp.add_argument("--estimator")
    sp.add_argument("--boot", type=int, default=500)
    sp.add_argument("--jobs", type=int,
                    default=int(os.environ.get("ADVESTIM_JOBS", "1")))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="bootstrap.json")
    sp.set_defaults(fn=_cmd_bootstrap)

    sp = sub.add_parser("run-experiment", help="roster run plus target scorecard")
    sp.add_argument("experiment")
    sp.add_argument("--override", action="append", metavar="K=V")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int,
                    default=int(os.environ.get("ADVESTIM_JOBS", "1")))
    sp.add_argument("--out")
    sp.set_defaults(fn=_cmd_run_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, KeyError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
