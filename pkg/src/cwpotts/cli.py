"""Command-line driver: ``cwpotts <subcommand> [options]``.

Every run writes ``<out>/<runid>/manifest.json`` first and then its data files.
The run id is a hash of the command and its resolved parameters, so repeating a
command (or replaying a manifest) rewrites the same directory with identical
data files.  Parameters are resolved in this order, later wins: built-in
defaults, ``--config`` key=value file, command-line flags, and the
``POTTS_SEED`` environment variable for the seed.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import constants as C
from . import couplings as CP
from . import exact as EX
from . import simulate as SM
from .model import InvalidInput, ModelParams, OutOfDomain, TooLarge, rate_function, worst_case_drift

EXIT_OK, EXIT_USAGE, EXIT_CAP = 0, 2, 3

log = logging.getLogger("cwpotts")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parameter parsing helpers

def _int_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _float_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _beta(text):
    """A float, or one of the symbolic values beta_c / beta_s (needs q, resolved later)."""
    if isinstance(text, (int, float)):
        return float(text)
    t = str(text).strip()
    if t in ("beta_c", "beta_s", "bc", "bs"):
        return t
    return float(t)


# Each subcommand: option name -> (type, default, help).  Types double as config-file parsers.
COMMON = {
    "seed": (int, 0, "master seed (POTTS_SEED overrides)"),
    "threads": (int, 1, "maximum worker threads"),
}

COMMANDS = {
    "constants": {
        "q": (int, None, "number of colours (>= 2)"),
        "beta": (_beta, None, "optional inverse temperature for alpha1 / drift roots"),
    },
    "drift-curve": {
        "q": (int, 3, "colours"),
        "beta": (_beta, "beta_s", "inverse temperature"),
        "grid": (int, 1001, "grid points on [1/q, 1]"),
    },
    "surface": {
        "q": (int, 3, "colours (only 3 is supported)"),
        "beta": (_beta, "beta_c", "inverse temperature"),
        "grid": (int, 101, "points per side of the triangular grid"),
    },
    "exact-mix": {
        "q": (int, 3, "colours"),
        "n": (int, 60, "vertices"),
        "beta": (_beta, 0.8, "inverse temperature"),
        "eps": (_float_list, [0.25], "comma-separated epsilons"),
        "t_max": (int, 1_000_000, "step limit"),
        "start": (str, "monochromatic", "monochromatic or scan-all"),
    },
    "cutoff-scan": {
        "q": (int, 3, "colours"),
        "beta": (_beta, 0.8, "inverse temperature"),
        "n": (_int_list, [40, 80, 160], "comma-separated sizes"),
        "eps": (_float_list, [0.1, 0.25, 0.9], "comma-separated epsilons"),
        "t_max": (int, 1_000_000, "step limit"),
    },
    "bottleneck": {
        "q": (int, 3, "colours"),
        "beta": (_beta, 1.38, "inverse temperature"),
        "n": (_int_list, [60, 120], "comma-separated sizes"),
    },
    "restricted-mix": {
        "q": (int, 3, "colours"),
        "n": (int, 120, "vertices"),
        "beta": (_beta, 1.38, "inverse temperature"),
        "rho": (float, 0.05, "radius of the start region around the uniform vector"),
        "eps": (_float_list, [0.25], "comma-separated epsilons"),
        "t_max": (int, 200_000, "step limit"),
    },
    "simulate": {
        "q": (int, 3, "colours"),
        "n": (int, 1000, "vertices"),
        "beta": (_beta, 0.8, "inverse temperature"),
        "steps": (int, 10_000, "steps per trial"),
        "trials": (int, 1, "independent trials"),
        "start": (str, "monochromatic", "monochromatic or equiproportional"),
        "bounded_rho": (float, None, "reject moves leaving s^k < 1/q + rho"),
        "record_every": (int, None, "recording stride (default steps/10^4)"),
    },
    "couple": {
        "q": (int, 3, "colours"),
        "n": (int, 100, "vertices"),
        "beta": (_beta, 0.8, "inverse temperature"),
        "times": (str, "auto", "comma-separated times or 'auto'"),
        "trials": (int, 400, "coupled runs"),
        "gamma1": (float, 10.0, "stage 1 budget, units of n"),
        "t2_factor": (float, 1.0, "stage 2 length in units of alpha1 n log n"),
        "gamma3": (float, 10.0, "coordinate-wise budget, units of n"),
        "gamma4": (float, 10.0, "synchronized budget, units of n"),
        "gamma5": (float, 10.0, "basket-wise budget, units of n"),
        "y": (_float_list, None, "coordinate thresholds y_1..y_{q-1} (default all 1)"),
    },
    "kn-stat": {
        "q": (int, 3, "colours"),
        "n": (int, 1000, "vertices"),
        "beta": (_beta, "beta_s", "inverse temperature"),
        "y": (float, 0.5, "stop once S^1 <= y"),
        "delta": (float, None, "gap threshold (default n^-1/4)"),
        "t": (int, None, "time horizon (default n)"),
        "trials": (int, 200, "trials"),
    },
}


SUMMARY = {
    "constants": "critical and spinodal temperatures, drift landscape at a given beta",
    "drift-curve": "worst-case drift D and its derivatives on a grid",
    "surface": "normalised rate function over the simplex (q = 3)",
    "exact-mix": "exact TV profile and mixing times of the lumped chain",
    "cutoff-scan": "t_mix / (n log n) across sizes and epsilons",
    "bottleneck": "exact bottleneck ratio and Cheeger lower bound",
    "restricted-mix": "mixing from near-uniform starts vs the worst start",
    "simulate": "Monte Carlo trajectories of the proportions chain",
    "couple": "coupling upper bound on TV with Wilson intervals",
    "kn-stat": "drift-sharpness statistic K_n",
}


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cwpotts", description="Mean-field Potts Glauber dynamics experiments")
    ap.add_argument("--version", action="version", version=f"cwpotts {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=SUMMARY.get(name))
        for key, (typ, _default, hlp) in {**opts, **COMMON}.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=hlp)
        sp.add_argument("--config", default=None, help="key=value parameter file")
        sp.add_argument("--out", default="results", help="output root directory")
    rp = sub.add_parser("replay", help="re-run a command from its manifest.json")
    rp.add_argument("manifest")
    rp.add_argument("--out", default=None)
    return ap


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def resolve_params(command: str, flags: dict, config: dict | None = None, env=None) -> dict:
    env = os.environ if env is None else env
    spec = {**COMMANDS[command], **COMMON}
    params = {}
    for key, (typ, default, _h) in spec.items():
        val = default
        if config and key in config:
            try:
                val = typ(config[key])
            except ValueError as e:
                raise UsageError(f"bad config value for {key}: {config[key]!r}") from e
        if flags.get(key) is not None:
            val = flags[key]
        params[key] = val
    unknown = set(config or {}) - set(spec)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if env.get("POTTS_SEED"):
        try:
            params["seed"] = int(env["POTTS_SEED"])
        except ValueError as e:
            raise UsageError("POTTS_SEED must be an integer") from e
    if "q" in spec and params.get("q") is None:
        raise UsageError("--q is required")
    if isinstance(params.get("beta"), str):
        q = params["q"]
        params["beta"] = C.beta_c(q) if params["beta"] in ("beta_c", "bc") else C.beta_s(q)
    return params


def run_id(command: str, params: dict) -> str:
    blob = json.dumps({"command": command, "params": params}, sort_keys=True)
    return f"{command}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}"


# ---------------------------------------------------------------- output helpers

class Output:
    def __init__(self, root: Path, command: str, params: dict):
        self.dir = root / run_id(command, params)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list = []
        self.manifest = {
            "command": command,
            "params": params,
            "seed": params.get("seed", 0),
            "version": __version__,
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "finished": None,
            "outputs": [],
        }
        self._write_manifest()

    def _write_manifest(self):
        (self.dir / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        (self.dir / name).write_text(buf.getvalue())
        self.files.append(name)
        return self.dir / name

    def json(self, name: str, obj):
        (self.dir / name).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        self.files.append(name)
        return self.dir / name

    def close(self):
        self.manifest["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self.manifest["outputs"] = self.files
        self._write_manifest()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip, '.' decimal regardless of locale
    if x is None:
        return ""
    return str(x)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else None
    return o


# ---------------------------------------------------------------- subcommands

def cmd_constants(p, out: Output):
    q, beta = p["q"], p["beta"]
    doc = {"q": q, "beta_c": C.beta_c(q), "beta_s": C.beta_s(q)}
    if q >= 3:
        te = C.tangency_expansion(q)
        doc["s_star_at_beta_s"] = te.s_star
        doc["tangency"] = {"alpha": te.alpha, "a": te.a, "b": te.b}
        doc["alpha2"] = te.alpha2
    if beta is not None:
        doc["beta"] = beta
        doc["alpha1"] = C.alpha1(beta, q) if beta < q / 2 else None
        if 0 < beta < q / 2:
            s_star, s_sharp, roots = C.critical_points(beta, q)
            doc.update(s_star=s_star, s_sharp=s_sharp, drift_roots=roots, max_drift=C.max_drift(beta, q)[0])
        try:
            doc["s_check"] = C.ordered_phase_vector(beta, q)
        except OutOfDomain:
            doc["s_check"] = None
    out.json("constants.json", doc)
    print(json.dumps(_jsonable(doc), indent=2, sort_keys=True))


def cmd_drift_curve(p, out: Output):
    q, beta, grid = p["q"], p["beta"], p["grid"]
    if grid < 2:
        raise UsageError("grid needs at least 2 points")
    x = np.linspace(1.0 / q, 1.0, grid)
    D, D1, D2 = worst_case_drift(x, beta, q)
    out.csv("drift_curve.csv", ["x", "D", "D1", "D2"], zip(x, D, D1, D2))


def surface_grid(beta: float, grid: int):
    """Normalised rate function on the triangle s1, s2 >= 0, s1 + s2 <= 1."""
    h = 1.0 / (grid - 1)
    pts = [(i * h, j * h) for i in range(grid) for j in range(grid - i)]
    s = np.array([[a, b, max(0.0, 1.0 - a - b)] for a, b in pts])
    return s, rate_function(s, beta, normalize=True)


def cmd_surface(p, out: Output):
    if p["q"] != 3:
        raise UsageError("surface supports q = 3 only")
    s, I = surface_grid(p["beta"], p["grid"])
    out.csv("surface.csv", ["s1", "s2", "I"], ((a[0], a[1], v) for a, v in zip(s, I)))


def _profile_rows(prof):
    return zip(prof.times, prof.d)


def _profile_summary(prof, n):
    return {
        "t_mix": {str(e): t for e, t in prof.t_mix.items()},
        "t_mix_over_nlogn": {str(e): (t / (n * math.log(n)) if t is not None else None) for e, t in prof.t_mix.items()},
        "window": {str(e): w for e, w in prof.window.items()},
        "steps_run": int(prof.times[-1]),
        "renormalisations": prof.renormalisations,
    }


def cmd_exact_mix(p, out: Output):
    params = ModelParams(p["q"], p["n"], p["beta"])
    space = EX.enumerate_states(params)
    prof = EX.worst_case_profile(space, p["t_max"], p["eps"], mode=p["start"])
    f = out.csv("profile.csv", ["t", "tv"], _profile_rows(prof))
    doc = {"params": {"q": params.q, "n": params.n, "beta": params.beta}, **_profile_summary(prof, params.n),
           "profile_csv": f.name}
    out.json("summary.json", doc)
    print(json.dumps(_jsonable(doc), indent=2, sort_keys=True))


def cmd_cutoff_scan(p, out: Output):
    rows, table = [], {}
    for n in p["n"]:
        params = ModelParams(p["q"], n, p["beta"])
        prof = EX.worst_case_profile(EX.enumerate_states(params), p["t_max"], p["eps"])
        table[n] = _profile_summary(prof, n)
        for e in sorted(prof.t_mix):
            t = prof.t_mix[e]
            rows.append((n, e, t, t / (n * math.log(n)) if t is not None else None))
    out.csv("cutoff_scan.csv", ["n", "eps", "t_mix", "t_mix_over_nlogn"], rows)
    out.json("cutoff_scan.json", table)
    for r in rows:
        print("\t".join(_fmt(x) for x in r))


def cmd_bottleneck(p, out: Output):
    rows = []
    for n in p["n"]:
        r = EX.bottleneck_scan(EX.enumerate_states(ModelParams(p["q"], n, p["beta"])))
        rows.append((n, r.phi_star, r.best_cut, r.cheeger_bound, r.cut_mass, int(r.degenerate)))
    out.csv("bottleneck.csv", ["n", "phi_star", "best_cut", "cheeger_bound", "cut_mass", "degenerate"], rows)
    for r in rows:
        print("\t".join(_fmt(x) for x in r))


def cmd_restricted_mix(p, out: Output):
    params = ModelParams(p["q"], p["n"], p["beta"])
    space = EX.enumerate_states(params)
    kern = EX.Kernel(space)
    res = EX.restricted_mixing_profile(space, p["rho"], p["t_max"], p["eps"], kernel=kern)
    full = EX.worst_case_profile(space, p["t_max"], p["eps"], kernel=kern)
    out.csv("restricted_profile.csv", ["t", "tv"], _profile_rows(res))
    out.csv("unrestricted_profile.csv", ["t", "tv"], _profile_rows(full))
    doc = {"restricted": _profile_summary(res, params.n), "unrestricted": _profile_summary(full, params.n),
           "pi_outside_S_rho": res.pi_excluded, "restricted_starts": res.n_starts,
           "three_alpha1_nlogn": 3 * C.alpha1(params.beta, params.q) * params.n * math.log(params.n)
           if params.beta < params.q / 2 else None}
    out.json("summary.json", doc)
    print(json.dumps(_jsonable(doc), indent=2, sort_keys=True))


def cmd_simulate(p, out: Output):
    params = ModelParams(p["q"], p["n"], p["beta"])
    spec = SM.RunSpec(params, p["start"], p["steps"], p["seed"], p["trials"], p["bounded_rho"], p["record_every"])
    trajs = SM.run_trajectories(spec, threads=p["threads"])
    header = ["trial", "t"] + [f"s{k + 1}" for k in range(params.q)]
    rows = ((k, t, *(c / params.n)) for k, tr in enumerate(trajs) for t, c in zip(tr.times, tr.counts))
    out.csv("trajectories.csv", header, rows)
    finals = np.stack([tr.final / params.n for tr in trajs])
    doc = {"final_mean": finals.mean(axis=0), "final_sd": finals.std(axis=0), "trials": spec.trials,
           "stride": spec.stride}
    out.json("summary.json", doc)


def _auto_times(params: ModelParams, sp: CP.StageParams, points: int = 11):
    n = params.n
    horizon = sp.gamma1 * n + sp.t2_factor * C.alpha1(params.beta, params.q) * n * math.log(n) \
        + (sp.gamma3 + sp.gamma4 + sp.gamma5) * n
    return sorted(set(int(round(x)) for x in np.linspace(0, horizon, points)))


def cmd_couple(p, out: Output):
    params = ModelParams(p["q"], p["n"], p["beta"])
    sp = CP.StageParams(p["gamma1"], p["t2_factor"], tuple(p["y"]) if p["y"] else None,
                        p["gamma3"], p["gamma4"], p["gamma5"])
    times = _auto_times(params, sp) if p["times"] == "auto" else _int_list(p["times"])
    sigma0 = np.zeros(params.n, dtype=np.int64)
    curve = CP.coupling_tv_curve(sigma0, params, times, p["trials"], p["seed"], sp)
    out.csv("coupling_curve.csv", ["t", "bound", "wilson_lo", "wilson_hi"],
            zip(curve.times, curve.bound, curve.lo, curve.hi))
    out.json("coupling_curve.json", {"stage_params": sp.__dict__, "trials": curve.trials,
                                     "confidence": curve.confidence, "times": curve.times,
                                     "bound": curve.bound})


def cmd_kn_stat(p, out: Output):
    params = ModelParams(p["q"], p["n"], p["beta"])
    delta = p["delta"] if p["delta"] is not None else params.n ** -0.25
    t = p["t"] if p["t"] is not None else params.n
    spec = SM.RunSpec(params, "monochromatic", 0, p["seed"], p["trials"])
    k = SM.drift_sharpness_Kn(spec, p["y"], delta, t)
    doc = {"K_n": k, "delta": delta, "t": t, "y": p["y"], "trials": p["trials"]}
    out.json("kn.json", doc)
    print(json.dumps(_jsonable(doc), indent=2, sort_keys=True))


HANDLERS = {
    "constants": cmd_constants, "drift-curve": cmd_drift_curve, "surface": cmd_surface,
    "exact-mix": cmd_exact_mix, "cutoff-scan": cmd_cutoff_scan, "bottleneck": cmd_bottleneck,
    "restricted-mix": cmd_restricted_mix, "simulate": cmd_simulate, "couple": cmd_couple,
    "kn-stat": cmd_kn_stat,
}


def execute(command: str, params: dict, out_root) -> Path:
    out = Output(Path(out_root), command, params)
    HANDLERS[command](params, out)
    out.close()
    return out.dir


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    try:
        if args.command == "replay":
            man = json.loads(Path(args.manifest).read_text())
            root = args.out if args.out is not None else Path(args.manifest).resolve().parent.parent
            execute(man["command"], man["params"], root)
            return EXIT_OK
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
        config = read_config(args.config) if args.config else None
        params = resolve_params(args.command, flags, config)
        d = execute(args.command, params, args.out)
        print(f"results in {d}", file=sys.stderr)
        return EXIT_OK
    except TooLarge as e:
        print(f"cwpotts: size cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except (UsageError, InvalidInput, OutOfDomain, FileNotFoundError) as e:
        print(f"cwpotts: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
