"""``puffprint`` command-line interface.

Exit status: 0 on success, 1 for invalid input (bad flags, configs, files),
2 when a run fails (training divergence, every trial of a sweep point
failing). Diagnostics go to standard error; results go to files or, for
``decode``, to standard output as JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from puffprint import __version__
from puffprint import config as cfgmod
from puffprint.decoder import AGGREGATIONS, DEFAULT_AGGREGATE, build_synthetic_dataset, recover, train_decoder
from puffprint.distill import DistillRun, distill_student, make_task, probe_deltas, train_teacher
from puffprint.encoding import EncodingScheme
from puffprint.eval import SweepError, run_sweep
from puffprint.nn import NonFiniteError, TrainingDiverged, checkpoint
from puffprint.nn.gradcheck import format_table, run_selftest
from puffprint.puf import KeyRegistry, NoiseModel, generate_registry
from puffprint.rng import derive_seed

logger = logging.getLogger("puffprint")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


class UsageError(Exception):
    """Raised instead of exiting when argument parsing fails."""

    def __init__(self, message: str, usage: str):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message, self.format_usage())


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".config.json")


def _scheme(epsilon: float, m: int) -> EncodingScheme:
    return EncodingScheme.one_bit(epsilon) if m == 1 else EncodingScheme.compressed(m, epsilon)


def _write_rows(path: Path, rows: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def read_probes(path: str | os.PathLike) -> np.ndarray:
    """Load ``probes.csv``: one logit-difference row per line, comma separated."""
    rows = []
    with open(path, encoding="ascii", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric probe entry") from None
    if not rows:
        raise ValueError(f"{path}: no probe rows")
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows have differing lengths")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: non-finite probe entry")
    return arr


# ---------------------------------------------------------------------------
# subcommands


def cmd_keygen(args: argparse.Namespace) -> int:
    registry = generate_registry(args.bits, args.devices, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    registry.save(out)
    resolved = {"schema_version": cfgmod.SCHEMA_VERSION, "bits": args.bits, "devices": args.devices,
                "seed": args.seed}
    _sidecar(out).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote %d %d-bit keys to %s", len(registry), registry.n, out)
    return EXIT_OK


def cmd_train_decoder(args: argparse.Namespace) -> int:
    job = cfgmod.load("synth", args.config)
    synth = job.synth
    if args.registry:
        registry = KeyRegistry.load(args.registry)
    else:
        registry = generate_registry(synth.n, synth.R, synth.rng_seed)
    dataset = build_synthetic_dataset(synth, registry)
    logger.info("training decoder on %d synthetic samples", len(dataset))
    net, acc = train_decoder(dataset, job.train, job.hidden)
    logger.info("held-out bit accuracy %.4f", acc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"kind": "decoder", "n": synth.n, "d": synth.d, "bits_per_logit": synth.bits_per_logit,
            "val_bit_accuracy": acc, "config": cfgmod.resolved(job)}
    checkpoint.save(net, out, meta)
    cfgmod.echo(job, _sidecar(out))
    return EXIT_OK


def cmd_distill(args: argparse.Namespace) -> int:
    run_cfg = cfgmod.load("run", args.config)
    registry = KeyRegistry.load(args.registry)
    key = registry.key_of(args.leaker)
    n_expected = run_cfg.task.d * run_cfg.bits_per_logit
    if registry.n != n_expected:
        raise ValueError(f"registry holds {registry.n}-bit keys but the run needs {n_expected} "
                         f"({run_cfg.task.d} logits x {run_cfg.bits_per_logit} bits)")
    task = make_task(run_cfg.task)
    teacher, teacher_acc = train_teacher(task, run_cfg.teacher_hidden, run_cfg.teacher_train)
    logger.info("teacher test accuracy %.2f%%", teacher_acc)
    scheme = _scheme(run_cfg.epsilon, run_cfg.bits_per_logit)
    noise = NoiseModel(run_cfg.p_flip, derive_seed(run_cfg.seed, "flips"))
    run = DistillRun(teacher, scheme, key, noise, run_cfg.temperature)
    student_cfg = replace(run_cfg.student_train, rng_seed=derive_seed(run_cfg.seed, "student"))
    res = distill_student(teacher, run, task, run_cfg.student_hidden, student_cfg)
    logger.info("Acc_s %.2f%%  Acc_p %.2f%%", res.acc_s, res.acc_p)

    inputs = task.x_train
    if run_cfg.probes is not None and run_cfg.probes < inputs.shape[0]:
        inputs = inputs[: run_cfg.probes]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.echo(run_cfg, out / "config.json")
    checkpoint.save(teacher, out / "teacher.bin", {"kind": "teacher", "test_accuracy": teacher_acc})
    checkpoint.save(res.student, out / "student.bin", {"kind": "student", "test_accuracy": res.acc_p})
    _write_rows(out / "probes.csv", probe_deltas(teacher, res.student, inputs))
    metrics = {"Acc_s": res.acc_s, "Acc_p": res.acc_p, "epsilon": run_cfg.epsilon, "p_flip": run_cfg.p_flip,
               "seed": run_cfg.seed}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    registry = KeyRegistry.load(args.registry)
    probes = read_probes(args.probes)
    decoder = None
    scheme = None
    if args.decoder is None:
        if args.epsilon is None:
            raise ValueError("analytic decoding (no --decoder) needs --epsilon")
        scheme = _scheme(args.epsilon, args.bits_per_logit)
        if scheme.key_bits(probes.shape[1]) != registry.n:
            raise ValueError(f"{probes.shape[1]} logits at {args.bits_per_logit} bits each do not give "
                             f"{registry.n}-bit keys")
    else:
        decoder, meta = checkpoint.load(args.decoder)
        if decoder.output_dim != registry.n:
            raise ValueError(f"decoder predicts {decoder.output_dim} bits, registry holds {registry.n}-bit keys")
        if decoder.input_dim != probes.shape[1]:
            raise ValueError(f"decoder expects {decoder.input_dim} logits, probes have {probes.shape[1]}")
    result = recover(decoder, probes, registry, scheme=scheme, aggregate=args.aggregate)
    payload = result.to_dict()
    payload["probes"] = int(probes.shape[0])
    payload["stage1"] = "analytic" if decoder is None else "neural"
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    grid = cfgmod.load("grid", args.grid)
    if args.jobs is not None and args.jobs < 1:
        raise ValueError("--jobs must be >= 1")
    jobs = args.jobs or os.cpu_count() or 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfgmod.resolved(grid)
    resolved["master_seed"] = args.seed
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report = run_sweep(grid, args.seed, out, jobs=jobs)
    sys.stdout.write(report.summary_table())
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.configs, args.seed)
    sys.stdout.write(format_table(results) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="puffprint", description="PUF-keyed logit fingerprinting toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="generate a registry of distinct device keys")
    p.add_argument("--bits", type=int, required=True, help="key length n")
    p.add_argument("--devices", type=int, required=True, help="number of enrolled devices R")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="registry.txt")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("train-decoder", help="train the stage-1 decoder on synthetic logit differences")
    p.add_argument("--config", required=True, help="synth.json")
    p.add_argument("--out", required=True, help="decoder checkpoint path")
    p.add_argument("--registry", help="registry file (default: generated from the config seed)")
    p.set_defaults(func=cmd_train_decoder)

    p = sub.add_parser("distill", help="distil a fingerprinted student for one leaker device")
    p.add_argument("--config", required=True, help="run.json")
    p.add_argument("--registry", required=True)
    p.add_argument("--leaker", required=True, help="device id whose key is embedded")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("decode", help="recover the leaker device from probe logit differences")
    p.add_argument("--decoder", help="decoder checkpoint; omit for analytic stage 1")
    p.add_argument("--registry", required=True)
    p.add_argument("--probes", required=True, help="probes.csv")
    p.add_argument("--aggregate", choices=AGGREGATIONS, default=DEFAULT_AGGREGATE)
    p.add_argument("--epsilon", type=float, help="perturbation scale for analytic decoding")
    p.add_argument("--bits-per-logit", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", help="run a seeded multi-trial grid")
    p.add_argument("--grid", required=True, help="grid.json")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--jobs", type=int, default=None, help="parallel trial workers (default: core count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("nn", help="network engine utilities")
    nn_sub = p.add_subparsers(dest="nn_command", required=True, parser_class=_Parser)
    q = nn_sub.add_parser("selftest", help="finite-difference gradient check")
    q.add_argument("--configs", type=int, default=20, help="random configurations per case")
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"puffprint: error: {exc}\n")
        return EXIT_INVALID
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (TrainingDiverged, NonFiniteError, SweepError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILED
    except (ValueError, KeyError, OSError) as exc:
        # covers ConfigError, RegistryError and CheckpointError
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        logger.error("%s", msg)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.error("unexpected failure: %s: %s", type(exc).__name__, exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
