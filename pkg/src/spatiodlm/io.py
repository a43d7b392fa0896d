"""Text file formats: stations, responses, covariates, run configs and posterior archives.

Every number is written as the shortest decimal that round-trips to the same
double (``repr``); missing values use the token ``NA``.
"""
from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ObservedDataset
from .interpolation import PredictiveDraws
from .model import HyperParams, ModelSpec, Variant
from .samplers import ChainConfig, PosteriorSample
from .spatial import SiteSet

NA = "NA"


class ConfigError(ValueError):
    """Invalid configuration or input cross-check failure."""


def fmt(x) -> str:
    x = float(x)
    return NA if np.isnan(x) else repr(x)


def parse_number(token: str) -> float:
    token = token.strip()
    if token in ("", NA):
        return float("nan")
    return float(token)


def _rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        rows = [[c.strip() for c in r] for r in reader]
    if not rows:
        raise ConfigError(f"{path}: empty file")
    return [h.lower() for h in rows[0]], rows[1:]


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(r) + "\n")


# --------------------------------------------------------------------------- stations


@dataclass(frozen=True)
class StationTable:
    gauged: SiteSet
    ungauged_coords: np.ndarray  # 2 x N*
    ungauged_ids: tuple[str, ...]


def parse_station_table(path, anchors: tuple[int, int] = (0, 1)) -> StationTable:
    """Read ``id,lon,lat[,role]``; role is ``gauged`` (default) or ``ungauged``."""
    header, rows = _rows(path)
    if header[:3] != ["id", "lon", "lat"]:
        raise ConfigError(f"{path}: header must start with id,lon,lat")
    has_role = len(header) > 3 and header[3] == "role"
    ids, coords, roles = [], [], []
    for k, r in enumerate(rows, start=2):
        try:
            lon, lat = float(r[1]), float(r[2])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}:{k}: non-numeric coordinates") from None
        if not (np.isfinite(lon) and np.isfinite(lat)):
            raise ConfigError(f"{path}:{k}: non-finite coordinates")
        ids.append(r[0])
        coords.append((lon, lat))
        role = r[3].lower() if has_role and len(r) > 3 and r[3] else "gauged"
        if role not in ("gauged", "ungauged"):
            raise ConfigError(f"{path}:{k}: unknown role {role!r}")
        roles.append(role)
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ConfigError(f"{path}: duplicate station id {dup!r}")
    g = [k for k, r in enumerate(roles) if r == "gauged"]
    u = [k for k, r in enumerate(roles) if r == "ungauged"]
    if len(g) < 3:
        raise ConfigError(f"{path}: need at least 3 gauged stations, found {len(g)}")
    xy = np.array(coords).T
    try:
        sites = SiteSet(xy[:, g], anchors=anchors, ids=tuple(ids[k] for k in g))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return StationTable(sites, xy[:, u] if u else np.empty((2, 0)), tuple(ids[k] for k in u))


def parse_station_file(path, anchors: tuple[int, int] = (0, 1)) -> SiteSet:
    return parse_station_table(path, anchors).gauged


def write_station_file(path, sites: SiteSet, ungauged_coords=None, ungauged_ids=()) -> None:
    rows = [[i, fmt(x), fmt(y), "gauged"] for i, (x, y) in zip(sites.ids, sites.coords.T)]
    if ungauged_coords is not None:
        rows += [[i, fmt(x), fmt(y), "ungauged"] for i, (x, y) in zip(ungauged_ids, np.asarray(ungauged_coords).T)]
    _write_rows(path, ["id", "lon", "lat", "role"], rows)


# --------------------------------------------------------------------------- responses and covariates


def read_response_array(path, site_ids, q: int | None = None, T: int | None = None) -> np.ndarray:
    """Long format ``t,site_id,var_idx,value`` (1-based t and var_idx) to a ``T x N x q`` array.

    Cells absent from the file are missing.
    """
    header, rows = _rows(path)
    if header[:4] != ["t", "site_id", "var_idx", "value"]:
        raise ConfigError(f"{path}: header must be t,site_id,var_idx,value")
    index = {s: k for k, s in enumerate(site_ids)}
    parsed = []
    for k, r in enumerate(rows, start=2):
        try:
            t, i, v = int(r[0]), int(r[2]), parse_number(r[3])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}:{k}: malformed row") from None
        if r[1] not in index:
            raise ConfigError(f"{path}:{k}: unknown site id {r[1]!r}")
        parsed.append((k, t, index[r[1]], i, v))
    T = T if T is not None else max((p[1] for p in parsed), default=0)
    q = q if q is not None else max((p[3] for p in parsed), default=0)
    y = np.full((T, len(site_ids), q), np.nan)
    seen = np.zeros(y.shape, dtype=bool)
    for k, t, n, i, v in parsed:
        if not (1 <= t <= T and 1 <= i <= q):
            raise ConfigError(f"{path}:{k}: index out of range (t={t}, var_idx={i})")
        if seen[t - 1, n, i - 1]:
            raise ConfigError(f"{path}:{k}: duplicate cell (t={t}, site={site_ids[n]}, var_idx={i})")
        seen[t - 1, n, i - 1] = True
        y[t - 1, n, i - 1] = v
    return y


def parse_response_file(path, sites: SiteSet, q: int | None = None, T: int | None = None) -> ObservedDataset:
    y = read_response_array(path, sites.ids, q, T)
    empty = np.all(np.isnan(y), axis=(0, 1))
    if np.any(empty):
        raise ConfigError(f"{path}: response variable {int(np.flatnonzero(empty)[0]) + 1} has no observed values")
    return ObservedDataset(sites, y)


def write_response_file(path, responses: np.ndarray, site_ids) -> None:
    T, N, q = responses.shape
    rows = ([str(t + 1), site_ids[n], str(i + 1), fmt(responses[t, n, i])]
            for t in range(T) for i in range(q) for n in range(N))
    _write_rows(path, ["t", "site_id", "var_idx", "value"], rows)


def parse_covariate_file(path, site_ids, T: int | None = None) -> np.ndarray:
    """``t,site_id,x1..xp`` to a ``T x N x p`` array; every (t, site) must appear once."""
    header, rows = _rows(path)
    if header[:2] != ["t", "site_id"] or len(header) < 3:
        raise ConfigError(f"{path}: header must be t,site_id,x1,...,xp")
    p = len(header) - 2
    index = {s: k for k, s in enumerate(site_ids)}
    T = T if T is not None else max((int(r[0]) for r in rows), default=0)
    X = np.full((T, len(site_ids), p), np.nan)
    for k, r in enumerate(rows, start=2):
        try:
            t, vals = int(r[0]), [float(v) for v in r[2:2 + p]]
        except ValueError:
            raise ConfigError(f"{path}:{k}: malformed row") from None
        if r[1] not in index or not 1 <= t <= T or len(vals) != p:
            raise ConfigError(f"{path}:{k}: unknown site, bad time index or wrong column count")
        if not np.all(np.isnan(X[t - 1, index[r[1]]])):
            raise ConfigError(f"{path}:{k}: duplicate covariate row")
        X[t - 1, index[r[1]]] = vals
    if np.isnan(X).any():
        raise ConfigError(f"{path}: covariates missing for some (t, site) pairs")
    return X


def write_covariate_file(path, X: np.ndarray, site_ids) -> None:
    T, N, p = X.shape
    rows = ([str(t + 1), site_ids[n]] + [fmt(v) for v in X[t, n]] for t in range(T) for n in range(N))
    _write_rows(path, ["t", "site_id"] + [f"x{j + 1}" for j in range(p)], rows)


# --------------------------------------------------------------------------- configuration

CONFIG_DEFAULTS: dict[str, object] = {
    "model.variant": "M4",
    "model.anchor1": 1,
    "model.anchor2": 2,
    "model.w_factor": 0.05,
    "model.c0_scale": 1.0,
    "prior.a_V": 0.001,
    "prior.b_V": 0.001,
    "prior.a_Sigma": 0.001,
    "prior.b_Sigma_scale": 0.001,
    "prior.phi_rate": 0.0,  # 0 means 0.3 / median gauged distance
    "deform.tau": 1.0,
    "deform.psi": 10.0,
    "chain.iterations": 20000,
    "chain.burn_in": 5000,
    "chain.thin": 15,
    "chain.seed": 1,
    "mh.log_step": 0.3,
    "slice.max_step_outs": 50,
    "sim.T": 100,
    "sim.gamma": 0.15,
    "sim.seed": 1,
    "metrics.alpha": 0.05,
    "interp.seed": 1,
}


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(CONFIG_DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            vals[k] = _coerce(k, v)
        return RunConfig(vals)

    def chain(self) -> ChainConfig:
        try:
            return ChainConfig(self["chain.iterations"], self["chain.burn_in"], self["chain.thin"], self["chain.seed"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def priors(self, q: int) -> HyperParams:
        rate = self["prior.phi_rate"]
        return HyperParams(
            a_V=self["prior.a_V"], b_V=self["prior.b_V"], a_Sigma=self["prior.a_Sigma"],
            b_Sigma=self["prior.b_Sigma_scale"] * np.eye(q), phi_rate=rate if rate > 0 else None,
        )

    def model_spec(self, sites: SiteSet, X: np.ndarray, q: int) -> ModelSpec:
        T, _, p = X.shape
        c0 = self["model.c0_scale"] * np.eye(p)
        try:
            return ModelSpec(
                sites=sites, X=X, q=q, variant=Variant(self["model.variant"]), C0=c0,
                W=(self["model.w_factor"] / max(T, 1)) * c0, M0=np.zeros((p, q)), priors=self.priors(q),
                tau=self["deform.tau"], psi=self["deform.psi"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def anchors(self) -> tuple[int, int]:
        return self["model.anchor1"] - 1, self["model.anchor2"] - 1

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.values.items()))


def _coerce(key: str, raw: str):
    if key not in CONFIG_DEFAULTS:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = type(CONFIG_DEFAULTS[key])
    try:
        return kind(raw) if kind is not int else int(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None


def read_config(path) -> RunConfig:
    """Flat ``section.key=value`` lines; ``#`` starts a comment."""
    overrides = {}
    with open(path) as fh:
        for k, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{k}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            overrides[key] = val
    cfg = RunConfig().with_overrides(overrides)
    if cfg["model.variant"] not in {v.value for v in Variant}:
        raise ConfigError(f"unknown model variant {cfg['model.variant']!r}")
    return cfg


# --------------------------------------------------------------------------- archives


def spec_hash(spec: ModelSpec, data: ObservedDataset) -> str:
    h = hashlib.sha256()
    for arr in (spec.S, spec.X, spec.G, spec.W, spec.M0, spec.C0, spec.priors.b_Sigma,
                spec.priors.a_Sigma_diag, spec.priors.b_Sigma_diag, spec.deform_prior.sigma2d, data.responses):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    h.update(repr((spec.variant.value, spec.q, spec.sites.anchors, spec.priors.a_V, spec.priors.b_V,
                   spec.priors.a_Sigma, spec.priors.phi_rate, spec.deform_prior.psi)).encode())
    return h.hexdigest()


def write_matrix(path, arr: np.ndarray, header=None) -> None:
    arr = np.atleast_2d(np.asarray(arr, float))
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in arr:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_matrix(path, header: bool = True) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if header:
        lines = lines[1:]
    return np.array([[parse_number(v) for v in ln.split(",")] for ln in lines], dtype=float)


def write_kv(path, items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def read_kv(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.rstrip("\n").split("=", 1)
                out[k] = v
    return out


def write_archive(directory, posterior: PosteriorSample, spec: ModelSpec, data: ObservedDataset,
                  seed: int) -> Path:
    """Posterior draws as one CSV per parameter plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    K, T1, p, q = posterior.betas.shape
    N = posterior.D.shape[2]
    write_matrix(d / "indices.csv", posterior.indices[:, None], ["iteration"])
    write_matrix(d / "V.csv", posterior.V[:, None], ["V"])
    write_matrix(d / "phi.csv", posterior.phi[:, None], ["phi"])
    write_matrix(d / "Sigma.csv", posterior.Sigma.reshape(K, q * q),
                 [f"Sigma_{i + 1}_{j + 1}" for i in range(q) for j in range(q)])
    write_matrix(d / "D.csv", posterior.D.reshape(K, 2 * N),
                 [f"{ax}_{sid}" for ax in ("lon", "lat") for sid in spec.sites.ids])
    write_matrix(d / "betas.csv", posterior.betas.reshape(K, T1 * p * q),
                 [f"beta_{t}_{j + 1}_{i + 1}" for t in range(T1) for j in range(p) for i in range(q)])
    if posterior.imputed is not None and posterior.imputed.shape[1]:
        t, n, i = data.missing_positions()
        write_matrix(d / "imputed.csv", posterior.imputed,
                     [f"y_{tt + 1}_{spec.sites.ids[nn]}_{ii + 1}" for tt, nn, ii in zip(t, n, i)])
    if posterior.trace is not None:
        write_matrix(d / "trace.csv", posterior.trace, ["iteration", "logpost", "phi_accepted"])
    write_kv(d / "manifest.txt", {
        "format": "spatiodlm-archive-1",
        "spec_hash": spec_hash(spec, data),
        "variant": spec.variant.value,
        "seed": seed,
        "K": K,
        "T": T1 - 1,
        "N": N,
        "p": p,
        "q": q,
        "burn_in": posterior.burn_in,
        "thin": posterior.thin,
        "first_index": int(posterior.indices[0]),
        "last_index": int(posterior.indices[-1]),
        "phi_accept_rate": fmt(posterior.phi_accept_rate),
    })
    return d


def read_archive(directory) -> tuple[PosteriorSample, dict[str, str]]:
    d = Path(directory)
    if not (d / "manifest.txt").exists():
        raise FileNotFoundError(f"{d}: not a posterior archive (manifest.txt missing)")
    man = read_kv(d / "manifest.txt")
    K, T, N, p, q = (int(man[k]) for k in ("K", "T", "N", "p", "q"))
    indices = read_matrix(d / "indices.csv")[:, 0].astype(int)
    if len(indices) != K:
        raise ConfigError(f"{d}: manifest says K={K} but indices.csv has {len(indices)} rows")
    imputed = read_matrix(d / "imputed.csv") if (d / "imputed.csv").exists() else None
    trace = read_matrix(d / "trace.csv") if (d / "trace.csv").exists() else None
    post = PosteriorSample(
        indices=indices,
        betas=read_matrix(d / "betas.csv").reshape(K, T + 1, p, q),
        V=read_matrix(d / "V.csv")[:, 0],
        Sigma=read_matrix(d / "Sigma.csv").reshape(K, q, q),
        phi=read_matrix(d / "phi.csv")[:, 0],
        D=read_matrix(d / "D.csv").reshape(K, 2, N),
        imputed=imputed, thin=int(man["thin"]), burn_in=int(man["burn_in"]),
        phi_accept_rate=parse_number(man["phi_accept_rate"]), trace=trace,
    )
    for name, arr in (("V", post.V), ("phi", post.phi)):
        if len(arr) != K:
            raise ConfigError(f"{d}: {name}.csv row count does not match the manifest")
    return post, man


def write_predictive(directory, draws: PredictiveDraws, ids, posterior_indices) -> None:
    """Long-format predictive draws and per-site mean / 2.5% / 97.5% summaries."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    K, T, Ns, q = draws.Ystar.shape
    with open(d / "predictive.csv", "w") as fh:
        fh.write("iteration,t,site_id,var_idx,value\n")
        for k in range(K):
            it = str(int(posterior_indices[k]))
            for t in range(T):
                for i in range(q):
                    for n in range(Ns):
                        fh.write(f"{it},{t + 1},{ids[n]},{i + 1},{fmt(draws.Ystar[k, t, n, i])}\n")
    write_matrix(d / "Dstar.csv", draws.Dstar.reshape(K, 2 * Ns),
                 [f"{ax}_{sid}" for ax in ("lon", "lat") for sid in ids])
    mean = draws.mean()
    lo, hi = draws.quantiles([0.025, 0.975])
    with open(d / "predictive_summary.csv", "w") as fh:
        fh.write("t,site_id,var_idx,mean,q025,q975\n")
        for t in range(T):
            for i in range(q):
                for n in range(Ns):
                    fh.write(f"{t + 1},{ids[n]},{i + 1},{fmt(mean[t, n, i])},{fmt(lo[t, n, i])},{fmt(hi[t, n, i])}\n")


def read_predictive(directory, ids, q: int) -> PredictiveDraws:
    d = Path(directory)
    header, rows = _rows(d / "predictive.csv")
    its = sorted({int(r[0]) for r in rows})
    T = max(int(r[1]) for r in rows)
    kpos = {it: k for k, it in enumerate(its)}
    npos = {s: n for n, s in enumerate(ids)}
    y = np.full((len(its), T, len(ids), q), np.nan)
    for r in rows:
        y[kpos[int(r[0])], int(r[1]) - 1, npos[r[2]], int(r[3]) - 1] = parse_number(r[4])
    dstar = read_matrix(d / "Dstar.csv").reshape(len(its), 2, len(ids))
    return PredictiveDraws(dstar, y)


def default_output_dir() -> Path:
    return Path(os.environ.get("SPATIODLM_OUTPUT", "spatiodlm_out"))
