"""Command-line front end: ``nbthin analyze|simulate|estimate|bounds|selftest``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    Model,
    NumericalError,
    default_t_grid,
    g_curve,
    g_exact,
    g_expansion_generic,
    g_expansion_p0zero,
    intensity_expansion,
    intensity_homogeneous,
    intensity_inhomogeneous,
    local_mass,
    mean_intensity,
    poisson_mixture,
)
from .bounds import bound_coupling_tv, bound_coupling_tv_inhomog, bound_laplace, compare_routes, evaluate_routes
from .config import ConfigError, RunConfig
from .estim import default_bins, empirical_laplace, estimate_g, estimate_intensity, summarise
from .selftest import run_selftest
from .sim import run_replicates, simulate_coupled, simulate_thinning

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SELFTEST = 0, 2, 3, 4


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


class _Writer:
    """Writes tables into the output directory, each tagged with the config hash."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    @property
    def tag(self) -> str:
        return f"config_sha256={self.cfg.sha256}"

    def _put(self, rel: str, data: bytes) -> Path:
        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.files.append(rel)
        return path

    def table(self, stem: str, columns: list[str], rows, comments: list[str] = ()) -> Path:
        if self.cfg["format"] == "json":
            doc = {"config_sha256": self.cfg.sha256, "notes": list(comments), "columns": columns}
            doc["rows"] = [dict(zip(columns, _jsonable(list(r)))) for r in rows]
            return self._put(f"{stem}.json", (json.dumps(doc, indent=1) + "\n").encode())
        buf = io.StringIO()
        buf.write(f"# {self.tag}\n")
        for c in comments:
            buf.write(f"# {c}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return self._put(f"{stem}.csv", buf.getvalue().encode())

    def text(self, rel: str, content: str) -> Path:
        return self._put(rel, content.encode())

    def raw(self, rel: str, data: bytes) -> Path:
        return self._put(rel, data)

    def manifest(self, command: str, started: float, extra: dict | None = None) -> Path:
        doc = {
            "command": command,
            "version": __version__,
            "config_sha256": self.cfg.sha256,
            "config": self.cfg.to_dict(),
            "master_seed": self.cfg["seed"],
            "threads": self.cfg["threads"],
            "files": sorted(self.files),
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "wall_time_s": round(time.perf_counter() - started, 3),
            "python": platform.python_version(),
            "numpy": np.__version__,
        }
        doc.update(extra or {})
        path = self.out / "manifest.json"
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext(None)


# ---------------------------------------------------------------------------
# analyze


def _expansion_rows(model: Model, mus, ts):
    p = model.rule.table(2)
    if p[0] > 0 and p[1] > 0:
        kind = "generic"
    elif p[0] == 0 and p[1] > 0:
        kind = "p0zero"
    else:
        return None, []
    rows = []
    for mu in mus:
        m = Model.from_mu(model.d, mu, model.rule, lam=model.lam)
        for t in ts:
            exact = g_exact(m, t)
            if kind == "generic":
                ev = g_expansion_generic(m, t)
                approx, valid = ev.value, ev.valid
            else:
                approx, valid = g_expansion_p0zero(m, t), True
            rows.append([mu, t, exact, approx, abs(exact - approx), valid])
    return kind, rows


def cmd_analyze(cfg: RunConfig) -> list[str]:
    started = time.perf_counter()
    wr = _Writer(cfg)
    model, a = cfg.model(), cfg["analyze"]
    d = model.d
    rows = []
    for x in a["points"]:
        if model.homogeneous:
            mass, exact = model.mu, intensity_homogeneous(model, a["tol"])
        else:
            mass = local_mass(model, x, a["quad_tol"])
            exact = intensity_inhomogeneous(model, x, a["quad_tol"], a["tol"])
        for k in a["expansion_orders"]:
            ex = intensity_expansion(model, x, k, a["quad_tol"])
            rows.append([*x, mass, exact, k, ex.partial_sum, ex.remainder_bound, abs(exact - ex.partial_sum)])
    cols = [f"x{i + 1}" for i in range(d)] + ["local_mass", "intensity", "order", "partial_sum", "remainder_bound", "abs_error"]
    wr.table("intensity", cols, rows)

    if model.homogeneous:
        grid = default_t_grid(a["t_grid"]["n"], a["t_grid"]["t_max"])
        with _executor(cfg["threads"]) as ex:
            curve = g_curve(model, grid, a["tol"], ex)
        wr.table("g_curve", ["t", "g"], zip(curve.t, curve.values), [f"m_p={poisson_mixture(model.rule, model.mu):.17g}"])
        kind, rows = _expansion_rows(model, a["expansion_mus"], a["expansion_t"])
        note = [f"expansion={kind}"] if kind else ["no small-mu expansion applies to this rule"]
        wr.table("expansion", ["mu", "t", "g_exact", "expansion", "abs_error", "valid"], rows, note)
    wr.manifest("analyze", started)
    return wr.files


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: RunConfig) -> list[str]:
    started = time.perf_counter()
    wr = _Writer(cfg)
    model, window, s = cfg.model(), cfg.window(), cfg["simulate"]
    coupled = s["mode"] == "coupled"
    m_p = poisson_mixture(model.rule, model.mu) if coupled and model.homogeneous else None
    if coupled and m_p is None:
        raise ConfigError("$.simulate.mode", "coupled mode needs a homogeneous model")
    tag = wr.tag

    def task(seed):
        if coupled:
            res = simulate_coupled(model, window, seed, m_p=m_p)
            pat, differ = res.dependent, res.differ_count
        else:
            pat, differ = simulate_thinning(model, window, seed), None
        blob = None
        if s["write_patterns"]:
            blob = pat.to_bytes() if s["pattern_format"] == "bin" else pat.to_csv(tag).encode()
        return len(pat), int(pat.retained.sum()), differ, blob

    results = run_replicates(task, cfg["seed"], s["n_replicates"], cfg["threads"])
    ext = "bin" if s["pattern_format"] == "bin" else "csv"
    rows = []
    for i, (n_in, n_kept, differ, blob) in enumerate(results):
        if blob is not None:
            wr.raw(f"patterns/rep_{i:06d}.{ext}", blob)
        rows.append([i, n_in, n_kept, differ])
    wr.table("summaries", ["replicate_index", "input_count", "count_in_W", "differ_count"], rows)
    wr.manifest("simulate", started, {"n_replicates": s["n_replicates"]})
    return wr.files


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(cfg: RunConfig) -> list[str]:
    started = time.perf_counter()
    wr = _Writer(cfg)
    model, window, e = cfg.model(), cfg.window(), cfg["estimate"]
    homog = model.homogeneous
    m_p = poisson_mixture(model.rule, model.mu) if homog else None

    def task(seed):
        if homog:
            res = simulate_coupled(model, window, seed, m_p=m_p)
            return res.dependent.kept(), res.independent.kept(), res.differ_count
        return simulate_thinning(model, window, seed).kept(), None, None

    results = run_replicates(task, cfg["seed"], e["n_replicates"], cfg["threads"])
    dep = [r[0] for r in results]

    est = estimate_intensity(dep, window)
    analytic = mean_intensity(model, window)
    wr.table("intensity", ["estimate", "se", "n_replicates", "analytic"], [[est.mean, est.std_error, est.n, analytic]])

    if homog:
        bins = default_bins(model.r, e["bin_width"], e["bin_extent"])
        gest = estimate_g(dep, model, window, bins, plugin=e["plugin"])
        wr.table(
            "g_hat",
            ["bin_lo", "bin_hi", "g_hat", "se", "g_exact"],
            zip(gest.bin_lo, gest.bin_hi, gest.g_hat, gest.std_error, gest.g_exact),
        )

        test = cfg.laplace_test()
        lam_p = intensity_homogeneous(model)
        if e["control_variate"]:
            ind = [r[1] for r in results]
            lap = empirical_laplace(dep, test, control=ind, control_mean=math.exp(test.poisson_log_laplace(lam_p)))
        else:
            lap = empirical_laplace(dep, test)
        log_pi = test.poisson_log_laplace(lam_p)
        shape = bound_laplace(model, window, test.sup, cfg.constants())
        delta = abs(math.log(lap.mean) - log_pi) if lap.mean > 0 else math.inf
        wr.table(
            "laplace",
            ["L_hat", "se", "log_L_hat", "log_L_poisson", "abs_delta_log", "laplace_bound", "bound_valid"],
            [[lap.mean, lap.std_error, math.log(lap.mean), log_pi, delta, shape.total, shape.valid]],
        )

        differ = summarise([r[2] for r in results])
        tv = bound_coupling_tv(model, window)
        wr.table(
            "coupling",
            ["mean_differ_count", "se", "p_differ", "p_differ_se", "analytic_mean"],
            [[differ.mean, differ.std_error, *_p_differ(results), tv.total]],
        )
    wr.manifest("estimate", started, {"n_replicates": e["n_replicates"]})
    return wr.files


def _p_differ(results):
    est = summarise([r[2] >= 1 for r in results])
    return est.mean, est.std_error


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(cfg: RunConfig) -> list[str]:
    started = time.perf_counter()
    wr = _Writer(cfg)
    model, window, b = cfg.model(), cfg.window(), cfg["bounds"]
    consts = cfg.constants()
    if not model.homogeneous:
        rep = bound_coupling_tv_inhomog(model, window, b["inhomog_quad_tol"])
        wr.text("reports.json", json.dumps({"config_sha256": cfg.sha256, "reports": {"CouplingTV": rep.to_dict()}}, indent=2) + "\n")
        wr.manifest("bounds", started)
        return wr.files
    with _executor(cfg["threads"]) as ex:
        table = compare_routes(model, window, b["g_sup"], b["quad_tol"], consts, executor=ex)
    reports = evaluate_routes(model, window, b["g_sup"], b["quad_tol"], consts)
    doc = {"config_sha256": cfg.sha256, "reports": {k: v.to_dict() for k, v in reports.items()}}
    wr.text("reports.json", json.dumps(_jsonable(doc), indent=2) + "\n")
    if cfg["format"] == "json":
        wr.text("routes.json", json.dumps({"config_sha256": cfg.sha256, "routes": json.loads(table.to_json())}, indent=2) + "\n")
    else:
        wr.text("routes.csv", table.to_csv(wr.tag))
    wr.text("routes.md", f"<!-- {wr.tag} -->\n" + table.to_markdown())
    wr.manifest("bounds", started)
    return wr.files


def cmd_selftest(cfg: RunConfig) -> int:
    results = run_selftest(cfg["seed"], cfg["selftest"]["n_replicates"])
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_SELFTEST if failed else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "estimate": cmd_estimate, "bounds": cmd_bounds}

_SELFTEST_DEFAULT = {"model": {"d": 2, "r": 0.05, "lambda": 50.0, "rule": {"kind": "matern_i"}}}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbthin", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name != "selftest", help="JSON or TOML run configuration")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), help="table format")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "threads": args.threads, "out": args.out, "format": args.format}
    try:
        if args.config is None:
            cfg = RunConfig.from_dict({**_SELFTEST_DEFAULT, **{k: v for k, v in overrides.items() if v is not None}})
        else:
            cfg = RunConfig.load(args.config, overrides)
        if args.command == "selftest":
            return cmd_selftest(cfg)
        files = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote {len(files)} files to {cfg['out']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
