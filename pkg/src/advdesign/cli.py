"""Command-line entry point: ``optimize``, ``exchange`` and ``posterior`` subcommands.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
replication diverged (all outputs are still written).
"""

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .exchange import cluster_design, point_exchange
from .gda import gda_run, make_streams
from .posterior import importance_posterior

log = logging.getLogger("advdesign")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

DEFAULT_EXCHANGE_SAMPLES = 1000


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _nums(a):
    return [_num(x) for x in np.asarray(a, dtype=float).ravel()]


def _prepare_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ConfigError(f"output directory {path} is not writable: {err}") from None
    return path


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, allow_nan=False)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read {path}: {err}") from None


def _artifact(config, replications):
    return {
        "model": config.model,
        "objective": config.gda.objective,
        "seed": config.gda.seed,
        "config": config.echo(),
        "replications": replications,
    }


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iter", "rep", "k_hat", "j_hat"])
        for t, r, k, j in trace.rows():
            out.writerow([t, r, repr(float(k)), "" if math.isnan(j) else repr(float(j))])


def write_design_trace(path, trace):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iter", "rep", "coord", "value"])
        for t, tau in zip(trace.snapshot_iters, trace.snapshot_tau):
            for r, row in enumerate(tau):
                for i, value in enumerate(row):
                    out.writerow([t, r, i, repr(float(value))])


def run_optimize(config):
    """Run GDA for every replication and write ``designs.json``, ``trace.csv`` and
    ``designs_trace.csv`` into ``config.out``. Returns ``(artifact, exit_code)``."""
    out = _prepare_dir(config.out)
    model = config.build_model()
    try:
        result = gda_run(model, config.gda)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    write_trace(out / "trace.csv", result.trace)
    write_design_trace(out / "designs_trace.csv", result.trace)
    reps = [
        {
            "rep": r,
            "tau": _nums(d.tau),
            "eta": _nums(result.eta[r]),
            "j_hat": _num(result.j_final[r]),
            "status": result.status[r],
        }
        for r, d in enumerate(result.designs)
    ]
    artifact = _artifact(config, reps)
    _write_json(out / "designs.json", artifact)
    code = EXIT_DIVERGED if result.diverged else EXIT_OK
    if config.exchange and code == EXIT_OK:
        run_exchange(config, artifact, out)
    return artifact, code


def _load_designs(designs):
    artifact = designs if isinstance(designs, dict) else _read_json(designs)
    try:
        reps = artifact["replications"]
        taus = [np.asarray(rep["tau"], dtype=float) for rep in reps]
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"malformed designs file: {err!r}") from None
    if not reps:
        raise ConfigError("designs file holds no replications")
    return artifact, reps, taus


def run_exchange(config, designs, out=None):
    """Point-exchange every replication of a designs artifact; writes ``designs_exchanged.json``."""
    _, reps, taus = _load_designs(designs)
    model = config.build_model()
    for tau in taus:
        if tau.shape != (model.n_coords,) or not np.all(np.isfinite(tau)):
            raise ConfigError(f"design of shape {tau.shape} does not fit model {config.model!r}")
    n_fixed = config.gda.j_samples or DEFAULT_EXCHANGE_SAMPLES
    theta_fixed = model.sample_prior(make_streams(config.gda.seed)["fixed"], n_fixed)
    radius = config.cluster_radius(model)
    kind = config.gda.objective
    new_reps = []
    for rep, tau in zip(reps, taus):
        res = point_exchange(model, theta_fixed, tau, kind, config.exchange_max_iters, radius)
        clusters = cluster_design(res.tau, radius, model.coord_dim)
        new_reps.append(
            {
                "rep": rep.get("rep"),
                "tau": _nums(res.tau),
                "tau_before": _nums(tau),
                "eta": rep.get("eta"),
                "j_hat": _num(res.j_after),
                "j_before": _num(res.j_before),
                "j_after": _num(res.j_after),
                "passes": res.iterations,
                "cluster_centers": [_nums(c) for c in clusters.centers],
                "cluster_counts": clusters.counts.tolist(),
                "status": rep.get("status", "ok"),
            }
        )
    artifact = _artifact(config, new_reps)
    if out is not None:
        _write_json(_prepare_dir(out) / "designs_exchanged.json", artifact)
    return artifact


def run_posterior(designs, theta_true, n_samples, seed=0, rep=0, sigma=None, out=None):
    """Importance-sampling posterior for one PK design. Returns the payload written to ``out``."""
    artifact, _, taus = _load_designs(designs)
    try:
        config = RunConfig.from_echo(artifact["config"])
    except (KeyError, TypeError) as err:
        raise ConfigError(f"designs file lacks a config echo: {err!r}") from None
    if config.model != "pk":
        raise ConfigError("the posterior demo needs designs for the pk model")
    model = config.build_model(**({} if sigma is None else {"sigma": sigma}))
    if not 0 <= rep < len(taus):
        raise ConfigError(f"replication {rep} not in designs file")
    tau = taus[rep]
    if tau.shape != (model.n_coords,):
        raise ConfigError(f"design has {tau.size} times, model expects {model.n_coords}")
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_true.shape != (model.p,):
        raise ConfigError(f"true theta needs {model.p} components")
    if n_samples < 1:
        raise ConfigError("sample count must be positive")
    post = importance_posterior(model, tau, theta_true, n_samples, np.random.default_rng(seed))
    payload = {
        "model": "pk",
        "seed": seed,
        "rep": rep,
        "sigma": model.sigma,
        "theta_true": _nums(theta_true),
        "tau": _nums(tau),
        "y": _nums(post.y),
        "ess": post.ess,
        "posterior_mean": _nums(post.mean()),
        "samples": [_nums(t) for t in post.theta],
        "weights": _nums(post.weights),
    }
    if out is not None:
        out = Path(out)
        _prepare_dir(out.parent)
        _write_json(out, payload)
    return payload


def _parse_theta(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="advdesign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="run gradient descent ascent from a config file")
    opt.add_argument("--config", required=True)
    opt.add_argument("--seed", type=int)
    opt.add_argument("--out")
    opt.add_argument("--estimator", choices=["closed_form", "score"], help="override the config's estimator")

    exc = sub.add_parser("exchange", help="point-exchange the designs of a previous run")
    exc.add_argument("--config", required=True)
    exc.add_argument("--designs", required=True)
    exc.add_argument("--out", help="directory for designs_exchanged.json (default: next to --designs)")

    post = sub.add_parser("posterior", help="importance-sampling posterior for a pk design")
    post.add_argument("--designs", required=True)
    post.add_argument("--theta", required=True, type=_parse_theta)
    post.add_argument("--samples", required=True, type=int)
    post.add_argument("--seed", type=int, default=0)
    post.add_argument("--rep", type=int, default=0)
    post.add_argument("--sigma", type=float, help="override the observation noise sd")
    post.add_argument("--out", help="output JSON (default: posterior.json next to --designs)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "optimize":
            config = load_config(args.config)
            try:
                if args.seed is not None:
                    config.gda = replace(config.gda, seed=args.seed)
                if args.estimator is not None:
                    config.gda = replace(config.gda, estimator=args.estimator)
                    config = replace(config)  # re-validate model/estimator pairing
            except ValueError as err:
                raise ConfigError(str(err)) from None
            if args.out is not None:
                config.out = Path(args.out)
            _, code = run_optimize(config)
            if code == EXIT_DIVERGED:
                log.error("at least one replication diverged; see status fields in designs.json")
            return code
        if args.command == "exchange":
            config = load_config(args.config)
            out = Path(args.designs).parent if args.out is None else Path(args.out)
            run_exchange(config, args.designs, out)
            return EXIT_OK
        out = Path(args.designs).parent / "posterior.json" if args.out is None else args.out
        run_posterior(args.designs, args.theta, args.samples, args.seed, args.rep, args.sigma, out)
        return EXIT_OK
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
