"""Command-line entry point: ``simulate``, ``fit``, ``interpolate``, ``compare``, ``diagnose``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .interpolation import UngaugedSet, run_interpolation
from .io import ConfigError, RunConfig, fmt
from .metrics import aggregate_is, compute_dic, compute_pmse, geweke_statistic, hpd_interval, parameter_chains
from .missing import run_da_chain
from .samplers import MhTuning, SliceTuning, Tunings
from .simulate import SimConfig, generate

logger = logging.getLogger("spatiodlm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class PhaseError(Exception):
    def __init__(self, phase: str, exc: Exception):
        super().__init__(f"{phase}: {exc}")
        self.phase, self.exc = phase, exc


def _config(args) -> RunConfig:
    cfg = io.read_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return cfg.with_overrides(overrides)


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else io.default_output_dir()


# --------------------------------------------------------------------------- simulate


def cmd_simulate(args) -> None:
    cfg = _config(args)
    sim = SimConfig(T=cfg["sim.T"], gamma=cfg["sim.gamma"], seed=cfg["sim.seed"])
    out = generate(sim)
    d = _out_dir(args)
    d.mkdir(parents=True, exist_ok=True)
    ids = out.data.sites.ids
    uids = out.ungauged.ids
    io.write_station_file(d / "stations.csv", out.data.sites, out.ungauged.coords, uids)
    io.write_response_file(d / "responses.csv", out.data.responses, ids)
    io.write_covariate_file(d / "covariates.csv", out.X, ids)
    io.write_covariate_file(d / "ungauged_covariates.csv", out.ungauged.X, uids)
    io.write_response_file(d / "truth_ungauged.csv", out.ungauged_truth, uids)
    io.write_response_file(d / "truth_complete.csv", out.complete, ids)
    io.write_matrix(d / "truth_D.csv", np.hstack([out.truth.D, out.Dstar]), list(ids) + list(uids))
    q = out.truth.Sigma.shape[0]
    io.write_kv(d / "truth_params.txt", {
        "V": fmt(out.truth.V), "phi": fmt(out.truth.phi),
        **{f"Sigma_{i + 1}_{j + 1}": fmt(out.truth.Sigma[i, j]) for i in range(q) for j in range(q)},
    })
    (d / "config.txt").write_text(cfg.dump())
    print(f"simulated T={sim.T} gamma={sim.gamma} into {d}")


# --------------------------------------------------------------------------- fit


def _load_problem(stations, responses, covariates, cfg: RunConfig, ungauged_cov=None):
    table = io.parse_station_table(stations, cfg.anchors())
    data = io.parse_response_file(responses, table.gauged)
    if covariates:
        X = io.parse_covariate_file(covariates, table.gauged.ids, data.T)
    else:
        X = np.ones((data.T, table.gauged.count, 1))
    spec = cfg.model_spec(table.gauged, X, data.q)
    ungauged = None
    if table.ungauged_ids:
        if ungauged_cov:
            Xs = io.parse_covariate_file(ungauged_cov, table.ungauged_ids, data.T)
        elif spec.p == 1:
            Xs = np.ones((data.T, len(table.ungauged_ids), 1))
        else:
            Xs = None
        if Xs is not None:
            ungauged = UngaugedSet(table.ungauged_coords, Xs, table.ungauged_ids)
    return table, data, spec, ungauged


def cmd_fit(args) -> None:
    cfg = _config(args)
    if args.variant:
        cfg = cfg.with_overrides({"model.variant": args.variant})
    if args.seed is not None:
        cfg = cfg.with_overrides({"chain.seed": str(args.seed)})
    chain = cfg.chain()
    _, data, spec, _ = _load_problem(args.stations, args.responses, args.covariates, cfg, args.ungauged_covariates)
    d = _out_dir(args)
    inputs = d / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.stations, inputs / "stations.csv")
    shutil.copyfile(args.responses, inputs / "responses.csv")
    if args.covariates:
        shutil.copyfile(args.covariates, inputs / "covariates.csv")
    if args.ungauged_covariates:
        shutil.copyfile(args.ungauged_covariates, inputs / "ungauged_covariates.csv")
    (inputs / "config.txt").write_text(cfg.dump())
    for i, frac in enumerate(data.missing_fractions()):
        print(f"response {i + 1}: {100 * frac:.2f}% missing")
    tunings = Tunings(MhTuning(log_step=cfg["mh.log_step"]), SliceTuning(max_step_outs=cfg["slice.max_step_outs"]))
    step = max(1, chain.iterations // 10)

    def progress(it, state):
        if it % step == 0:
            logger.info("iteration %d/%d phi=%.4g V=%.4g", it, chain.iterations, state.phi, state.V)

    try:
        post = run_da_chain(spec, data, chain, tunings, progress=progress)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise PhaseError("fit", exc) from exc
    io.write_archive(d, post, spec, data, chain.seed)
    print(f"archived K={post.K} draws of {spec.variant.value} in {d} (phi acceptance {post.phi_accept_rate:.3f})")


def load_fit(archive):
    """Rebuild (posterior, manifest, data, spec, ungauged) from an archive directory."""
    a = Path(archive)
    post, man = io.read_archive(a)
    inputs = a / "inputs"
    cfg = io.read_config(inputs / "config.txt")
    cov = inputs / "covariates.csv"
    ucov = inputs / "ungauged_covariates.csv"
    _, data, spec, ungauged = _load_problem(
        inputs / "stations.csv", inputs / "responses.csv", cov if cov.exists() else None, cfg,
        ucov if ucov.exists() else None,
    )
    if io.spec_hash(spec, data) != man["spec_hash"]:
        raise ConfigError(f"{a}: archived inputs do not match the manifest spec hash")
    return post, man, data, spec, ungauged, cfg


# --------------------------------------------------------------------------- interpolate


def cmd_interpolate(args) -> None:
    post, man, data, spec, ungauged, cfg = load_fit(args.archive)
    if args.ungauged_covariates:
        table = io.parse_station_table(Path(args.archive) / "inputs" / "stations.csv", cfg.anchors())
        Xs = io.parse_covariate_file(args.ungauged_covariates, table.ungauged_ids, spec.T)
        ungauged = UngaugedSet(table.ungauged_coords, Xs, table.ungauged_ids)
    if ungauged is None:
        raise ConfigError("no ungauged stations with covariates: add role=ungauged rows and --ungauged-covariates")
    seed = cfg["interp.seed"] if args.seed is None else args.seed
    try:
        draws = run_interpolation(spec, data, ungauged, post, seed)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise PhaseError("interpolate", exc) from exc
    out = Path(args.out) if args.out else Path(args.archive) / "interp"
    io.write_predictive(out, draws, ungauged.ids, post.indices)
    print(f"wrote {draws.K} predictive draws for {ungauged.count} sites to {out}")


# --------------------------------------------------------------------------- compare


def cmd_compare(args) -> None:
    rows, records = [], []
    alpha = args.alpha
    for archive in args.archives:
        post, man, data, spec, ungauged, cfg = load_fit(archive)
        name = Path(archive).name
        try:
            dic = compute_dic(spec, data, post)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise PhaseError("compare", exc) from exc
        row = {"model": name, "variant": man["variant"], "DIC": dic}
        records.append(("DIC", name, "-", "-", dic))
        interp = Path(archive) / "interp"
        if args.truth and (interp / "predictive.csv").exists() and ungauged is not None:
            truth = io.read_response_array(args.truth, ungauged.ids, spec.q, spec.T)
            draws = io.read_predictive(interp, ungauged.ids, spec.q)
            row["PMSE"] = compute_pmse(draws, truth)
            records.append(("PMSE", name, "-", "-", row["PMSE"]))
            scores = aggregate_is(draws, truth, alpha)
            for n, sid in enumerate(ungauged.ids):
                for i in range(spec.q):
                    row[f"IS_{sid}_{i + 1}"] = scores[n, i]
                    records.append(("IS", name, sid, str(i + 1), scores[n, i]))
        rows.append(row)
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    lines = ["".join(f"{c:>16}" for c in cols)]
    for r in rows:
        lines.append("".join(f"{_cell(r.get(c)):>16}" for c in cols))
    d = _out_dir(args)
    d.mkdir(parents=True, exist_ok=True)
    (d / "compare.txt").write_text("\n".join(lines) + "\n")
    (d / "compare_records.txt").write_text(
        "".join(f"{m},{model},{site},{var},{fmt(v)}\n" for m, model, site, var, v in records))
    print("\n".join(lines))


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    return "NA" if np.isnan(v) else f"{v:.4f}"


# --------------------------------------------------------------------------- diagnose


def cmd_diagnose(args) -> None:
    post, man = io.read_archive(args.archive)
    lines = [f"{'parameter':>14}{'mean':>12}{'hpd_lower':>12}{'hpd_upper':>12}{'geweke':>10}"]
    records = []
    for name, chain in parameter_chains(post).items():
        hpd = hpd_interval(chain, args.level)
        z = geweke_statistic(chain) if len(chain) >= 100 else float("nan")
        lines.append(f"{name:>14}{hpd.mean:>12.4f}{hpd.lower:>12.4f}{hpd.upper:>12.4f}{_cell(z):>10}")
        for key, val in (("mean", hpd.mean), ("hpd_lower", hpd.lower), ("hpd_upper", hpd.upper), ("geweke", z)):
            records.append(f"{key},{name},-,-,{fmt(val)}\n")
    d = Path(args.out) if args.out else Path(args.archive) / "diagnostics"
    d.mkdir(parents=True, exist_ok=True)
    (d / "diagnostics.txt").write_text("\n".join(lines) + "\n")
    (d / "diagnostics_records.txt").write_text("".join(records))
    print("\n".join(lines))


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatiodlm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", help="output directory (default: $SPATIODLM_OUTPUT or ./spatiodlm_out)")
        if config:
            p.add_argument("--config", help="key=value configuration file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")

    p = sub.add_parser("simulate", help="generate an anisotropic synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the data-augmentation MCMC and write a posterior archive")
    common(p)
    p.add_argument("--stations", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--covariates")
    p.add_argument("--ungauged-covariates")
    p.add_argument("--variant", choices=["M1", "M2", "M3", "M4"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("interpolate", help="posterior-predictive draws at ungauged stations")
    p.add_argument("--archive", required=True)
    p.add_argument("--ungauged-covariates")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("compare", help="DIC, PMSE and interval scores for one or more archives")
    p.add_argument("--archives", nargs="+", required=True)
    p.add_argument("--truth", help="held-out responses at ungauged stations (long format)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="posterior means, HPD intervals and Geweke statistics")
    p.add_argument("--archive", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error [{args.command}] configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhaseError as exc:
        print(f"error [{exc.phase}] numerical failure: {exc.exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error [{args.command}] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error [{args.command}] i/o: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error [{args.command}] configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
