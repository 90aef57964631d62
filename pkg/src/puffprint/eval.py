"""Recovery metrics and seeded multi-trial sweeps.

A sweep walks a grid over perturbation scale, key length, bits per logit and
bit-flip rate. Every grid point runs the same numbered trials: trial ``t``
draws its leaker and its noise from ``(master_seed, t)`` alone, so points are
compared on matched leakers and matched noise realisations.

Two modes are supported. ``decoder-only`` simulates the logit differences a
fingerprinted student would show (fast). ``end-to-end`` trains a teacher once
per ``(n, m)`` and a fingerprinted student plus a clean control per trial.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from puffprint.decoder import (
    AGGREGATIONS,
    DEFAULT_AGGREGATE,
    DEFAULT_DECODER_TRAIN,
    DEFAULT_EPSILON_SET,
    DEFAULT_HIDDEN,
    DEFAULT_PROBES,
    SynthConfig,
    build_synthetic_dataset,
    recover,
    simulate_probes,
    train_decoder,
)
from puffprint.distill import (
    DEFAULT_STUDENT_TRAIN,
    DEFAULT_TEACHER_TRAIN,
    DistillRun,
    TaskSpec,
    distill_student,
    make_task,
    probe_deltas,
    train_teacher,
)
from puffprint.encoding import EncodingScheme
from puffprint.nn import TrainConfig
from puffprint.puf import KeyRegistry, NoiseModel, as_bits, generate_registry, hamming_distance
from puffprint.rng import derive_seed, make_rng

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("decoder-only", "end-to-end")
FULL_TRIALS = 100


def ber(predicted, truth) -> float:
    """Fraction of key bits that differ."""
    return hamming_distance(predicted, truth) / as_bits(truth).size


@dataclass
class TrialReport:
    trial_id: int
    epsilon: float
    n: int
    m: int
    p_flip: float
    leaker_index: int
    leaker_id: str
    recovered_index: int = -1
    recovered_id: str = ""
    bit_errors_stage1: int = 0
    bit_errors_stage2: int = 0
    frame_error_stage1: bool = True
    frame_error_stage2: bool = True
    tie_flag: bool = False
    acc_s: Optional[float] = None
    acc_p: Optional[float] = None
    status: str = "ok"
    error: str = ""

    def __post_init__(self) -> None:
        if self.ok:
            if not 0 <= self.bit_errors_stage1 <= self.n or not 0 <= self.bit_errors_stage2 <= self.n:
                raise ValueError("bit error counts must lie in [0, n]")
            if self.frame_error_stage2 != (self.recovered_id != self.leaker_id):
                raise ValueError("stage-2 frame error must agree with the recovered device")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def point(self) -> tuple[float, int, int, float]:
        return (self.epsilon, self.n, self.m, self.p_flip)


def fer(reports: Sequence[TrialReport], stage: int = 2) -> float:
    """Fraction of completed trials whose key has at least one wrong bit."""
    done = [r for r in reports if r.ok]
    if not done:
        raise ValueError("no completed trials to compute a frame error rate over")
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    attr = "frame_error_stage1" if stage == 1 else "frame_error_stage2"
    return sum(bool(getattr(r, attr)) for r in done) / len(done)


# ---------------------------------------------------------------------------
# grid configuration


@dataclass(frozen=True)
class DecoderSpec:
    """Synthetic training set and network used in decoder-only sweeps."""

    Q: int = 1000
    epsilon_set: tuple[float, ...] = DEFAULT_EPSILON_SET
    epsilon_per: str = "sample"
    sigma: float = 0.1
    p_flip: float = 0.0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    train: TrainConfig = DEFAULT_DECODER_TRAIN


@dataclass(frozen=True)
class EndToEndSpec:
    """Task, network sizes and probing used in end-to-end sweeps.

    ``task.d`` is overridden by ``n // m`` at every grid point. ``probes=None``
    probes the student on the whole distillation query set.
    """

    task: TaskSpec = TaskSpec()
    teacher_hidden: tuple[int, ...] = (128, 128)
    student_hidden: tuple[int, ...] = (64,)
    teacher_train: TrainConfig = DEFAULT_TEACHER_TRAIN
    student_train: TrainConfig = DEFAULT_STUDENT_TRAIN
    temperature: float = 0.0
    stage1: str = "analytic"
    probes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.stage1 not in ("analytic", "neural"):
            raise ValueError(f"stage1 must be 'analytic' or 'neural', got {self.stage1!r}")
        if self.probes is not None and self.probes < 1:
            raise ValueError("probes must be >= 1 or null")


@dataclass(frozen=True)
class GridConfig:
    mode: str = "decoder-only"
    epsilons: tuple[float, ...] = (0.01, 0.02, 0.05)
    n: tuple[int, ...] = (10,)
    m: tuple[int, ...] = (1,)
    p_flip: tuple[float, ...] = (0.05,)
    trials: int = FULL_TRIALS
    devices: int = 100
    probes: int = DEFAULT_PROBES
    sigma: float = 0.1
    aggregate: str = DEFAULT_AGGREGATE
    compressed_decoder: str = "analytic"
    decoder: DecoderSpec = DecoderSpec()
    end_to_end: EndToEndSpec = EndToEndSpec()

    def __post_init__(self) -> None:
        for name in ("epsilons", "n", "m", "p_flip"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"grid axis {name!r} is empty")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(not (math.isfinite(e) and e > 0) for e in self.epsilons):
            raise ValueError("every epsilon must be positive")
        if any(not 0 <= p <= 1 for p in self.p_flip):
            raise ValueError("every p_flip must lie in [0, 1]")
        for n in self.n:
            for m in self.m:
                if n < 1 or m < 1 or n % m:
                    raise ValueError(f"n={n} is not a positive multiple of m={m}")
                if n < 63 and self.devices > 2**n:
                    raise ValueError(f"{self.devices} devices exceed the 2^{n} key space")
        if self.trials < 1 or self.devices < 1 or self.probes < 1:
            raise ValueError("trials, devices and probes must all be >= 1")
        if self.aggregate not in AGGREGATIONS:
            raise ValueError(f"aggregate must be one of {AGGREGATIONS}")
        if self.compressed_decoder not in ("analytic", "neural"):
            raise ValueError("compressed_decoder must be 'analytic' or 'neural'")

    def points(self) -> list[tuple[float, int, int, float]]:
        return [(e, n, m, p) for n in self.n for m in self.m for p in self.p_flip for e in self.epsilons]

    def to_dict(self) -> dict:
        return asdict(self)


def scheme_for(epsilon: float, m: int) -> EncodingScheme:
    return EncodingScheme.one_bit(epsilon) if m == 1 else EncodingScheme.compressed(m, epsilon)


# ---------------------------------------------------------------------------
# trial execution

@dataclass
class _Context:
    grid: GridConfig
    master_seed: int
    registries: dict = field(default_factory=dict)   # n -> KeyRegistry
    decoders: dict = field(default_factory=dict)     # (n, m) -> Network or None
    teachers: dict = field(default_factory=dict)     # (n, m) -> (teacher, task)


def _needs_neural(grid: GridConfig, m: int) -> bool:
    if grid.mode == "end-to-end":
        return grid.end_to_end.stage1 == "neural"
    return m == 1 or grid.compressed_decoder == "neural"


def _prepare(grid: GridConfig, master_seed: int) -> _Context:
    ctx = _Context(grid, master_seed)
    for n in grid.n:
        ctx.registries[n] = generate_registry(n, grid.devices, derive_seed(master_seed, "registry", n))
    for n in grid.n:
        for m in grid.m:
            ctx.decoders[(n, m)] = None
            if _needs_neural(grid, m):
                spec = grid.decoder
                seed = derive_seed(master_seed, "decoder", n, m)
                synth = SynthConfig(n=n, R=grid.devices, Q=spec.Q, epsilon_set=spec.epsilon_set, sigma=spec.sigma,
                                    rng_seed=seed, bits_per_logit=m, p_flip=spec.p_flip,
                                    epsilon_per=spec.epsilon_per)
                logger.info("training decoder for n=%d m=%d", n, m)
                net, acc = train_decoder(build_synthetic_dataset(synth, ctx.registries[n]),
                                         replace(spec.train, rng_seed=seed), spec.hidden)
                logger.info("decoder n=%d m=%d held-out bit accuracy %.4f", n, m, acc)
                ctx.decoders[(n, m)] = net
            if grid.mode == "end-to-end":
                e2e = grid.end_to_end
                task = make_task(replace(e2e.task, d=n // m))
                teacher, acc = train_teacher(task, e2e.teacher_hidden, e2e.teacher_train)
                logger.info("teacher n=%d m=%d test accuracy %.2f%%", n, m, acc)
                ctx.teachers[(n, m)] = (teacher, task)
    return ctx


def _leaker(ctx: _Context, n: int, trial: int) -> int:
    return int(make_rng(ctx.master_seed, "leaker", n, trial).integers(ctx.grid.devices))


def run_trial(ctx: _Context, point: tuple[float, int, int, float], trial: int) -> TrialReport:
    eps, n, m, p_flip = point
    registry: KeyRegistry = ctx.registries[n]
    idx = _leaker(ctx, n, trial)
    report = TrialReport(trial, eps, n, m, p_flip, idx, registry.ids[idx])
    try:
        key = registry[idx]
        scheme = scheme_for(eps, m)
        grid = ctx.grid
        decoder = ctx.decoders[(n, m)]
        if grid.mode == "decoder-only":
            rng = make_rng(ctx.master_seed, "probes", n, m, trial)
            deltas = simulate_probes(key, scheme, grid.probes, grid.sigma, p_flip, rng)
        else:
            teacher, task = ctx.teachers[(n, m)]
            e2e = grid.end_to_end
            noise = NoiseModel(p_flip, derive_seed(ctx.master_seed, "flips", trial))
            run = DistillRun(teacher, scheme, key, noise, e2e.temperature)
            cfg = replace(e2e.student_train, rng_seed=derive_seed(ctx.master_seed, "student", trial))
            res = distill_student(teacher, run, task, e2e.student_hidden, cfg)
            inputs = task.x_train
            if e2e.probes is not None and e2e.probes < inputs.shape[0]:
                pick = make_rng(ctx.master_seed, "probe-inputs", trial).choice(inputs.shape[0], e2e.probes,
                                                                               replace=False)
                inputs = inputs[np.sort(pick)]
            deltas = probe_deltas(teacher, res.student, inputs)
            report.acc_s, report.acc_p = res.acc_s, res.acc_p
        result = recover(decoder, deltas, registry, scheme=scheme, aggregate=grid.aggregate, truth=key)
        report.recovered_index = result.device_index
        report.recovered_id = result.device_id
        report.bit_errors_stage1 = int(result.stage1_hamming_to_truth)
        report.bit_errors_stage2 = hamming_distance(result.recovered, key)
        report.frame_error_stage1 = report.bit_errors_stage1 > 0
        report.frame_error_stage2 = result.device_index != idx
        report.tie_flag = result.tie_flag
    except Exception as exc:  # recorded, not fatal
        logger.warning("trial %d at %s failed: %s", trial, point, exc)
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
    return report


_WORKER_CTX: Optional[_Context] = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker(job: tuple[tuple[float, int, int, float], int]) -> TrialReport:
    assert _WORKER_CTX is not None
    return run_trial(_WORKER_CTX, *job)


# ---------------------------------------------------------------------------
# aggregation and output

CSV_COLUMNS = (
    "schema_version", "trial_id", "mode", "epsilon", "n", "m", "p_flip", "leaker_index", "leaker_id",
    "recovered_index", "recovered_id", "bit_errors_stage1", "bit_errors_stage2", "frame_error_stage1",
    "frame_error_stage2", "tie_flag", "acc_s", "acc_p", "status", "error",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _stats(values: list[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate(trials: Sequence[TrialReport]) -> list[dict]:
    """Per-point summary recomputed from trial records."""
    groups: dict[tuple, list[TrialReport]] = {}
    for r in trials:
        groups.setdefault(r.point, []).append(r)
    out = []
    for point in sorted(groups):
        rows = groups[point]
        done = [r for r in rows if r.ok]
        eps, n, m, p = point
        entry = {
            "epsilon": eps, "n": n, "m": m, "p_flip": p,
            "trials": len(rows), "completed": len(done), "failed": len(rows) - len(done),
            "reduced_trials": len(rows) < FULL_TRIALS,
        }
        if done:
            for stage in (1, 2):
                mean, std = _stats([getattr(r, f"bit_errors_stage{stage}") / r.n for r in done])
                entry[f"ber_stage{stage}_mean"], entry[f"ber_stage{stage}_std"] = mean, std
                entry[f"fer_stage{stage}"] = fer(done, stage)
            with_acc = [r for r in done if r.acc_s is not None]
            entry["acc_s_mean"], entry["acc_s_std"] = _stats([r.acc_s for r in with_acc])
            entry["acc_p_mean"], entry["acc_p_std"] = _stats([r.acc_p for r in with_acc])
            entry["acc_gap_mean"], _ = _stats([abs(r.acc_p - r.acc_s) for r in with_acc])
            entry["ties"] = sum(r.tie_flag for r in done)
        out.append(entry)
    return out


@dataclass
class SweepReport:
    config: GridConfig
    master_seed: int
    trials: list[TrialReport]
    points: list[dict]

    def point(self, epsilon: float, n: Optional[int] = None, m: Optional[int] = None,
              p_flip: Optional[float] = None) -> dict:
        for p in self.points:
            if (p["epsilon"] == epsilon and (n is None or p["n"] == n) and (m is None or p["m"] == m)
                    and (p_flip is None or p["p_flip"] == p_flip)):
                return p
        raise KeyError(f"no grid point with epsilon={epsilon}")

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.trials:
            row = asdict(r)
            row.update(schema_version=SCHEMA_VERSION, mode=self.config.mode)
            writer.writerow([_cell(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def aggregate_json(self) -> str:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.config.mode,
            "master_seed": self.master_seed,
            "points": self.points,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def summary_table(self) -> str:
        def pct(v: Optional[float]) -> str:
            return "-" if v is None else f"{100 * v:.1f}"

        def acc(mean: Optional[float], std: Optional[float]) -> str:
            return "-" if mean is None else f"{mean:.2f}±{std:.2f}"

        head = (f"{'eps':>6} {'n':>3} {'m':>2} {'p_flip':>6} {'Acc_s':>12} {'Acc_p':>12} "
                f"{'BER1%':>6} {'BER2%':>6} {'FER1%':>6} {'FER2%':>6} {'ok':>5}")
        lines = [head, "-" * len(head)]
        for p in self.points:
            lines.append(
                f"{p['epsilon']:>6g} {p['n']:>3} {p['m']:>2} {p['p_flip']:>6g} "
                f"{acc(p.get('acc_s_mean'), p.get('acc_s_std')):>12} {acc(p.get('acc_p_mean'), p.get('acc_p_std')):>12} "
                f"{pct(p.get('ber_stage1_mean')):>6} {pct(p.get('ber_stage2_mean')):>6} "
                f"{pct(p.get('fer_stage1')):>6} {pct(p.get('fer_stage2')):>6} {p['completed']:>2}/{p['trials']:<2}"
            )
        if any(p["reduced_trials"] for p in self.points):
            lines.append(f"note: fewer than {FULL_TRIALS} trials per point (reduced profile)")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(self.csv_text(), encoding="utf-8")
        (out / "aggregate.json").write_text(self.aggregate_json(), encoding="utf-8")
        (out / "summary.txt").write_text(self.summary_table(), encoding="utf-8")


class SweepError(RuntimeError):
    """Every trial of some grid point failed."""


def run_sweep(grid: GridConfig, master_seed: int, out_dir: str | os.PathLike | None = None,
              jobs: int = 1) -> SweepReport:
    """Run every trial of every grid point; optionally write the outputs to ``out_dir``.

    Results do not depend on ``jobs``. Raises :class:`SweepError` (after
    writing outputs) when all trials of a grid point failed.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    ctx = _prepare(grid, master_seed)
    work = [(point, t) for point in grid.points() for t in range(grid.trials)]
    if jobs == 1:
        trials = [run_trial(ctx, *job) for job in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            trials = list(pool.map(_worker, work, chunksize=max(1, len(work) // (4 * jobs))))
    report = SweepReport(grid, master_seed, trials, aggregate(trials))
    if out_dir is not None:
        report.write(out_dir)
    dead = [p for p in report.points if p["completed"] == 0]
    if dead:
        raise SweepError(f"all trials failed at {len(dead)} grid point(s), e.g. epsilon={dead[0]['epsilon']}")
    return report


__all__ = [
    "CSV_COLUMNS", "DecoderSpec", "EndToEndSpec", "GridConfig", "MODES", "SCHEMA_VERSION", "SweepError",
    "SweepReport", "TrialReport", "aggregate", "ber", "fer", "run_sweep", "run_trial", "scheme_for",
]
