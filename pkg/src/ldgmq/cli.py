"""Batch command line: one subcommand per analysis, CSV curves and JSON reports."""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import math
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, LdgmqError, SizeExceeded
from .ldgm import DegreeDistribution

EXIT_OK, EXIT_VERDICT, EXIT_ERROR = 0, 1, 2
COMMANDS = ("testchannel", "ebp", "de", "threshold", "quantize", "oracle", "ddsearch")


# ---------------------------------------------------------------- config helpers

def parse_number(v) -> float:
    """Float from a number or a string such as "0.3", "1/3" or "inf"."""
    if isinstance(v, bool):
        raise ConfigError(f"expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "infinity"):
            return math.inf
        try:
            return float(Fraction(s))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"cannot parse number {v!r}")


def parse_grid(spec, default=None) -> list[float]:
    """A list of numbers, or {"start", "stop", "num"} for an evenly spaced grid."""
    if spec is None:
        if default is None:
            raise ConfigError("missing grid")
        return list(default)
    if isinstance(spec, dict):
        try:
            start, stop, num = parse_number(spec["start"]), parse_number(spec["stop"]), int(spec["num"])
        except KeyError as e:
            raise ConfigError(f"grid missing field {e}") from None
        if num < 0:
            raise ConfigError("grid num must be >= 0")
        return np.linspace(start, stop, num).tolist()
    if isinstance(spec, (list, tuple)):
        return [parse_number(x) for x in spec]
    return [parse_number(spec)]


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config missing field {key!r}")
    return cfg[key]


def _int(cfg: dict, key: str, default=None, lo: int | None = None) -> int:
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(f"config missing field {key!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{key} must be an integer")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{key} must be >= {lo}")
    return v


def _dd(cfg: dict) -> DegreeDistribution:
    d = _require(cfg, "dd")
    if not isinstance(d, dict):
        raise ConfigError("dd must be an object")
    try:
        return DegreeDistribution.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad degree distribution: {e}") from None


def _channel(cfg: dict):
    from .source import channel_from_config

    c = _require(cfg, "problem")
    if not isinstance(c, dict):
        raise ConfigError("problem must be an object")
    return channel_from_config(c)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _git_hash() -> str | None:
    try:
        r = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                           cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return None
    if r.returncode != 0:
        return None
    return r.stdout.strip() or None


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


# ---------------------------------------------------------------- run context

class Run:
    """Holds the effective config, seed and output directory of one invocation."""

    def __init__(self, command: str, cfg: dict, out: Path, seed: int, threads: int, strict: bool):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.threads = threads
        self.strict = strict
        self.hash = config_hash({"command": command, "config": cfg, "seed": seed})
        self.files: list[str] = []

    def provenance(self) -> dict:
        return {"command": self.command, "config_sha256": self.hash, "seed": self.seed,
                "git_hash": _git_hash(), "version": __version__,
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return self._write(name, buf.getvalue())

    def write_json(self, name: str, report: dict) -> Path:
        body = {"provenance": self.provenance(), "config": self.cfg, **report}
        return self._write(name, json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")

    def _write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.out / name
        p.write_text(text)
        self.files.append(str(p))
        return p


# ---------------------------------------------------------------- commands

def cmd_testchannel(run: Run) -> tuple[dict, bool]:
    from .source import max_rate, min_random_coding_loss, problem_from_config, t0, ideal_mse

    cfg = run.cfg
    problem = problem_from_config(_require(cfg, "problem"))
    sweep = cfg.get("sweep", "R")
    if sweep not in ("R", "t"):
        raise ConfigError("sweep must be 'R' or 't'")
    top = max_rate(problem)
    if sweep == "R":
        default = np.linspace(0.02, 0.98, 97) * top
    else:
        default = np.geomspace(0.05, 20.0, 97)
    values = parse_grid(cfg.get("values"), default)
    mse = problem.kind == "mse"
    rows = []
    for v in values:
        if sweep == "R":
            if not 0 < v < top:
                raise ConfigError(f"rate {v} outside (0, {top})")
            t = t0(problem, v)
        else:
            if v < 0:
                raise ConfigError("t must be nonnegative")
            t = v
        D, R = problem.stats(t)
        row = [t, R, D]
        if mse:
            row.append(10 * math.log10(D / ideal_mse(R, problem.M)) if R > 0 else math.nan)
        rows.append(row)
    header = ["t", "R0", "D0"] + (["loss_db"] if mse else [])
    run.write_csv("testchannel.csv", header, rows)
    report = {"points": len(rows)}
    if mse and rows:
        i = int(np.nanargmin([r[3] for r in rows]))
        report["grid_minimum"] = dict(zip(header, rows[i]))
        report["minimum"] = min_random_coding_loss(problem.M)
    run.write_json("testchannel.json", report)
    return report, True


def _profile_f(cfg: dict, dd: DegreeDistribution):
    """Optional check polynomial for a 2^K erasure-like problem; None means the binary BEQ form."""
    if "problem" not in cfg:
        return None, None
    from .ebp import erasure_profile_2k, f_erasure_2k

    ch = _channel(cfg)
    if ch.problem.kind != "erasure_k":
        raise ConfigError("only erasure_k problems define a check polynomial")
    prof = erasure_profile_2k(ch)
    return f_erasure_2k(prof, dd), prof


def cmd_ebp(run: Run) -> tuple[dict, bool]:
    from .ebp import ebp_area, ebp_curve, monotonicity_check, solvability_threshold

    cfg = run.cfg
    dd = _dd(cfg)
    ius = parse_grid(_require(cfg, "Iu"))
    pts = _int(cfg, "grid_points", 1001, lo=2)
    grid = np.linspace(0.0, 1.0, pts)
    solv = solvability_threshold(dd)
    rows, verdicts = [], []
    for Iu in ius:
        if not 0 <= Iu < 1:
            raise ConfigError("Iu must lie in [0, 1)")
        c = ebp_curve(dd, Iu, grid)
        rows += [[Iu, x, ib, ie] for x, ib, ie in zip(c.x, c.Ib, c.Ibext)]
        m = monotonicity_check(dd, Iu)
        entry = {"Iu": Iu, "verdict": m.verdict, "margin": m.margin, "witness_x": m.witness_x,
                 "ib_at_0": m.ib_at_0, "solvable": bool(Iu < solv)}
        if m.verdict != "satisfied":
            entry["gap"] = {"min_dIb_sign": m.margin, "at_x": m.witness_x}
        a = ebp_area(dd, Iu)
        entry["area"] = {"A_ebp": a.A_ebp, "identity_residual": a.identity_residual, "bound": a.bound}
        verdicts.append(entry)
    run.write_csv("ebp.csv", ["Iu", "x", "Ib", "Ibext"], rows)
    report = {"dd": dd.to_dict(), "solvability_boundary": solv, "curves": verdicts}
    run.write_json("ebp.json", report)
    return report, all(v["verdict"] == "satisfied" for v in verdicts)


def cmd_de(run: Run) -> tuple[dict, bool]:
    from .de import bp_exit_sweep, sweep_verdict, CONV_TOL, GAP_TOL
    from .density import bec, prior_density_u

    cfg = run.cfg
    dd = _dd(cfg)
    if dd.K != 1:
        raise ConfigError("histogram DE handles K = 1; use the Monte-Carlo routines for K > 1")
    if "Iu" in cfg:
        du = bec(parse_number(cfg["Iu"]))
    else:
        du = prior_density_u(_channel(cfg))
    grid = parse_grid(cfg.get("grid"), np.linspace(0.0, 1.0, 21))
    L = _int(cfg, "L", 200, lo=1)
    tol = parse_number(cfg.get("tol", CONV_TOL))
    gap_tol = parse_number(cfg.get("gap_tol", GAP_TOL))
    pts = bp_exit_sweep(dd, du, grid, L, tol, gap_tol)
    run.write_csv("de.csv", ["Ib_pri", "I_lower", "I_upper", "l", "verdict"], [p.as_row() for p in pts])
    verdict = sweep_verdict(pts)
    report = {"dd": dd.to_dict(), "verdict": verdict, "points": len(pts),
              "unconverged": sum(not p.converged for p in pts)}
    run.write_json("de.json", report)
    return report, verdict == "satisfied"


def cmd_threshold(run: Run) -> tuple[dict, bool]:
    from .ebp import solvability_threshold, threshold_search

    cfg = run.cfg
    dd = _dd(cfg)
    tol = parse_number(cfg.get("tol", 1e-9))
    report = {"dd": dd.to_dict(), "R": dd.R, "Iu_thr": threshold_search(dd, tol),
              "solvability_boundary": solvability_threshold(dd)}
    report["Iu_thr_over_R"] = report["Iu_thr"] / dd.R
    run.write_json("threshold.json", report)
    return report, True


def _policy(cfg: dict):
    from .quantizer import DecimationPolicy

    p = cfg.get("policy", {})
    if not isinstance(p, dict):
        raise ConfigError("policy must be an object")
    p = {"on_contradiction": "record", **p}
    try:
        return DecimationPolicy(**p)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad policy: {e}") from None


def cmd_quantize(run: Run) -> tuple[dict, bool]:
    from .experiments import run_quantize_trials, summarize_trials, tpq_distortion
    from .ldgm import sample_code
    from .oracle import BATCH_MAX_BITS

    cfg = run.cfg
    dd = _dd(cfg)
    ch = _channel(cfg)
    ns = cfg.get("n")
    ns = ns if isinstance(ns, list) else [ns]
    if not ns or any(isinstance(n, bool) or not isinstance(n, int) or n <= 0 for n in ns):
        raise ConfigError("n must be a positive integer or a list of them")
    if cfg.get("oracle", False):
        runs = _int(cfg, "runs", 10000, lo=2)
        results = []
        for n in ns:
            if n + sample_code(dd, n).nb > BATCH_MAX_BITS:
                raise SizeExceeded(f"oracle mode needs n + nb <= {BATCH_MAX_BITS}")
            results.append({"n": n, **tpq_distortion(dd, n, ch, runs, root=run.seed)})
        report = {"mode": "tpq", "results": results}
        run.write_json("quantize.json", report)
        return report, all(abs(r["z"]) <= 3 for r in results)
    trials = _int(cfg, "trials", 1, lo=1)
    policy = _policy(cfg)
    K = _int(cfg, "K", dd.K, lo=1)
    results, aborted = [], 0
    for n in ns:
        outs = run_quantize_trials(dd, n, ch, policy, trials, root=run.seed, K=K, threads=run.threads)
        aborted += sum(o.aborted for o in outs)
        s = summarize_trials(outs, ch)
        s["n"] = n
        s["aborts"] = [o.error for o in outs if o.aborted]
        results.append(s)
    report = {"mode": "bp", "policy": policy.to_dict(), "results": results}
    key = "median_failure_fraction" if "median_failure_fraction" in results[0] else "mean_distortion"
    seq = [r.get(key) for r in results]
    if len(seq) > 1 and None not in seq:
        report["trend"] = {"metric": key, "values": seq,
                           "non_increasing": all(b <= a for a, b in zip(seq, seq[1:]))}
    run.write_json("quantize.json", report)
    if aborted:
        raise TrialAborted(f"{aborted} trial(s) aborted; see quantize.json")
    return report, report.get("trend", {}).get("non_increasing", True)


class TrialAborted(LdgmqError):
    pass


def cmd_oracle(run: Run) -> tuple[dict, bool]:
    from .experiments import loopy_diagnostic, oracle_sweep
    from .ldgm import code_from_matrix, sample_code
    from .oracle import MAX_BITS, area_identity_check

    cfg = run.cfg
    ch = _channel(cfg)
    if ch.group.order != 2:
        raise ConfigError("the oracle command works with binary problems")
    max_bits = _int(cfg, "max_bits", 20, lo=4)
    if max_bits > MAX_BITS:
        raise SizeExceeded(f"max_bits {max_bits} exceeds the oracle cap {MAX_BITS}")
    instances = _int(cfg, "instances", 100, lo=0)
    report = {"marginals": oracle_sweep(ch, instances, max_bits, run.seed),
              "loopy": loopy_diagnostic(ch, run.seed)}
    ok = max(report["marginals"]["max_dev_b"], report["marginals"]["max_dev_a"]) <= 1e-9
    area = cfg.get("area")
    if area is not None:
        if "G" in area:
            code = code_from_matrix(np.asarray(area["G"], dtype=np.uint8))
        else:
            code = sample_code(_dd(area), _int(area, "n", 4, lo=1), seed=run.seed)
        if code.nb + code.nc > MAX_BITS:
            raise SizeExceeded("area instance exceeds the oracle cap")
        r = area_identity_check(code, ch, _int(area, "samples", 20000, lo=2), seed=run.seed)
        r["z"] = (r["lhs"] - r["rhs"]) / r["stderr"] if r["stderr"] > 0 else 0.0
        report["area_identity"] = r
        ok = ok and abs(r["z"]) <= 4
    run.write_json("oracle.json", report)
    return report, ok


def cmd_ddsearch(run: Run) -> tuple[dict, bool]:
    from .ebp import dd_search, erasure_profile_2k, monotonicity_check

    cfg = run.cfg
    target = _require(cfg, "target")
    if target not in ("max_iu", "min_rate"):
        raise ConfigError("target must be max_iu or min_rate")
    db = _int(cfg, "db", lo=2)
    degrees = _require(cfg, "degrees")
    value = parse_number(_require(cfg, "value"))
    delta = parse_number(cfg.get("delta", 1e-6))
    K = _int(cfg, "K", 1, lo=1)
    profile = erasure_profile_2k(_channel(cfg)) if "problem" in cfg else None
    r = dd_search(target, db, degrees, value, delta, K, profile, _int(cfg, "grid_points", 2001, lo=3))
    report = {"feasible": r.feasible, "value": r.value, "min_margin": r.min_margin,
              "binding_x": r.binding_x, "audit": r.audit,
              "dd": r.dd.to_dict() if r.dd else None, "v": r.dd.v if r.dd else None}
    if r.dd is not None and profile is None:
        Iu = r.value if target == "max_iu" else value
        report["check"] = monotonicity_check(r.dd, Iu).verdict
    run.write_json("ddsearch.json", report)
    return report, r.feasible


HANDLERS = {"testchannel": cmd_testchannel, "ebp": cmd_ebp, "de": cmd_de, "threshold": cmd_threshold,
            "quantize": cmd_quantize, "oracle": cmd_oracle, "ddsearch": cmd_ddsearch}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldgmq", description="LDGM quantization experiments")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes (default: LDGMQ_THREADS or 1)")
    p.add_argument("--strict", action="store_true", help="exit 1 when an analysis verdict fails")
    # inline shortcuts, merged over the config file
    p.add_argument("--problem", help="problem kind, e.g. mse")
    p.add_argument("--M", type=int, help="alphabet size for --problem")
    p.add_argument("--sweep", choices=("R", "t"))
    p.add_argument("--oracle", action="store_true", help="quantize: exact TPQ mode")
    return p


def load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if args.problem:
        prob = dict(cfg.get("problem", {}))
        prob["kind"] = args.problem
        if args.M is not None:
            prob["M"] = args.M
        cfg["problem"] = prob
    if args.sweep:
        cfg["sweep"] = args.sweep
    if args.oracle:
        cfg["oracle"] = True
    return cfg


def main(argv=None) -> int:
    from .experiments import thread_count

    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        seed = args.seed if args.seed is not None else _int(cfg, "seed", 0, lo=0)
        cfg.pop("seed", None)
        run = Run(args.command, cfg, Path(args.out), seed, thread_count(args.threads), args.strict)
        report, ok = HANDLERS[args.command](run)
    except (LdgmqError, ValueError) as e:
        print(f"ldgmq {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps({"command": args.command, "ok": ok, "files": run.files}))
    if args.strict and not ok:
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
