"""Trial runners shared by the command line and the acceptance tests."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DecimationContradiction, LdgmqError
from .ldgm import DegreeDistribution, sample_code
from .oracle import tpq_batch
from .quantizer import DecimationPolicy, quantize
from .source import ERASED, TestChannel

# stream ids keep per-purpose seeds apart
STREAM_CODE, STREAM_SOURCE, STREAM_DECIMATION, STREAM_ORACLE = 1, 2, 3, 4


def trial_seed(root: int, stream: int, trial: int) -> np.random.SeedSequence:
    """Counter-based child seed: (root, stream, trial) fully determines the stream."""
    return np.random.SeedSequence(entropy=int(root), spawn_key=(int(stream), int(trial)))


def trial_rng(root: int, stream: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(trial_seed(root, stream, trial))


def thread_count(cli_value: int | None) -> int:
    if cli_value is not None:
        return max(1, int(cli_value))
    env = os.environ.get("LDGMQ_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError("LDGMQ_THREADS must be an integer") from None


def failure_fraction(problem, y, u) -> float:
    """Share of non-erased positions whose reconstruction misses the source symbol."""
    y = np.asarray(y)
    if getattr(problem, "kind", "") not in ("erasure",):
        raise ConfigError("failure fraction is defined for erasure sources")
    known = y != ERASED
    if not known.any():
        return 0.0
    return float(np.mean(np.asarray(u)[known] != y[known]))


@dataclass
class TrialOutcome:
    trial: int
    distortion: float
    iterations: int
    contradictions: int
    aborted: bool  # unexpected failure
    failure: float | None = None
    error: str | None = None
    halted: bool = False  # stopped by a contradiction under the "raise" policy


def _one_trial(args) -> TrialOutcome:
    dd, n, K, ch, policy, root, trial, fixed_code_seed = args
    code_seed = fixed_code_seed if fixed_code_seed is not None else int(
        trial_seed(root, STREAM_CODE, trial).generate_state(1)[0])
    code = sample_code(dd, n, K=K, seed=code_seed)
    y = ch.problem.sample_y(n, trial_rng(root, STREAM_SOURCE, trial))
    try:
        r = quantize(code, ch, y, policy, seed=trial_seed(root, STREAM_DECIMATION, trial))
    except DecimationContradiction as e:
        return TrialOutcome(trial, float("nan"), 0, 1, False, None, f"contradiction: {e}", True)
    except (LdgmqError, ArithmeticError) as e:
        return TrialOutcome(trial, float("nan"), 0, 0, True, None, f"{type(e).__name__}: {e}")
    fail = failure_fraction(ch.problem, y, r.u) if ch.problem.kind == "erasure" else None
    return TrialOutcome(trial, r.distortion, r.iterations, r.contradictions, False, fail)


def run_quantize_trials(dd: DegreeDistribution, n: int, ch: TestChannel, policy: DecimationPolicy,
                        trials: int, root: int = 0, K: int = 1, threads: int = 1,
                        code_seed: int | None = None) -> list[TrialOutcome]:
    if n <= 0:
        raise ConfigError("block length n must be positive")
    if trials <= 0:
        raise ConfigError("trials must be positive")
    jobs = [(dd, n, K, ch, policy, root, t, code_seed) for t in range(trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_one_trial, jobs))
    return [_one_trial(j) for j in jobs]


def summarize_trials(outs: list[TrialOutcome], ch: TestChannel) -> dict:
    ok = [o for o in outs if not (o.aborted or o.halted)]
    d = np.array([o.distortion for o in ok])
    rep = {
        "trials": len(outs),
        "completed": len(ok),
        "halted": sum(o.halted for o in outs),
        "aborted": sum(o.aborted for o in outs),
        "contradiction_rate": float(np.mean([o.contradictions > 0 for o in outs])),
        "mean_distortion": float(d.mean()) if len(d) else None,
        "std_distortion": float(d.std(ddof=1)) if len(d) > 1 else None,
        "mean_iterations": float(np.mean([o.iterations for o in ok])) if ok else None,
        "D0": float(ch.D0),
    }
    fails = [o.failure for o in ok if o.failure is not None]
    if fails:
        rep["median_failure_fraction"] = float(np.median(fails))
        rep["mean_failure_fraction"] = float(np.mean(fails))
    return rep


def tpq_distortion(dd: DegreeDistribution, n: int, ch: TestChannel, runs: int, root: int = 0,
                   batch: int = 5000) -> dict:
    """Mean TPQ distortion over fresh codes and sources versus D0."""
    vals = []
    done = 0
    k = 0
    while done < runs:
        s = min(batch, runs - done)
        rng = trial_rng(root, STREAM_ORACLE, k)
        code = sample_code(dd, n, seed=int(rng.integers(2**31)))
        ys = ch.problem.sample_y(s * n, rng).reshape(s, n)
        r = tpq_batch(code, ch, ys, rng.random((s, code.nc)), rng.random((s, code.nb)))
        vals.append(r["distortion"])
        done += s
        k += 1
    v = np.concatenate(vals)
    se = float(v.std(ddof=1) / math.sqrt(len(v)))
    return {"mean": float(v.mean()), "stderr": se, "D0": float(ch.D0), "runs": int(len(v)),
            "z": float((v.mean() - ch.D0) / se) if se > 0 else 0.0}


def oracle_sweep(ch: TestChannel, instances: int, max_bits: int, seed: int = 0) -> dict:
    """BP versus exact extrinsics on random loop-free instances, both b and a kinds."""
    from .oracle import _with_a, bp_vs_exact_a, bp_vs_exact_b, random_loop_free_case, reference_path

    rng = trial_rng(seed, STREAM_ORACLE, 0)
    dev_b = dev_a = 0.0
    for _ in range(instances):
        code, i, L = random_loop_free_case(rng, "b", max_bits)
        _, y, b, a = reference_path(code, ch, rng)
        code = _with_a(code, a)
        for upper in (False, True):
            dev_b = max(dev_b, bp_vs_exact_b(code, ch, y, b, i, L, upper)["dev"])
        code, s, L = random_loop_free_case(rng, "a", max_bits)
        _, y, b, a = reference_path(code, ch, rng)
        code = _with_a(code, a)
        dev_a = max(dev_a, bp_vs_exact_a(code, ch, y, b, a, s, L)["dev"])
    return {"instances": instances, "max_dev_b": dev_b, "max_dev_a": dev_a}


def loopy_diagnostic(ch: TestChannel, seed: int = 0, L: int = 3) -> dict:
    """One instance with a short cycle; the deviation is reported, not judged."""
    from .ldgm import code_from_matrix, neighborhood
    from .oracle import _with_a, bp_vs_exact_b, reference_path

    G = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 1, 1, 1]], dtype=np.uint8)
    code = code_from_matrix(G)
    rng = trial_rng(seed, STREAM_ORACLE, 1)
    _, y, b, a = reference_path(code, ch, rng)
    code = _with_a(code, a)
    r = bp_vs_exact_b(code, ch, y, b, 0, L, False)
    return {"loop_free": bool(neighborhood(code, ("b", 0), L).loop_free), "dev": r["dev"], "L": L}
