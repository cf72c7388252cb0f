"""Command-line interface: adapt over a manifest, generate synthetic data,
and render metrics.

Exit codes: 0 success, 2 usage or input error, 3 numerical fatality.
The run seed resolves as: --seed flag > CRG_SEED environment variable >
config file > default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import EngineConfig
from .data import read_manifest, read_samples, read_text_block, resolve_block_path, SynthConfig, synth_write
from .engine import EngineState, MetricsReport, load_checkpoint, run_stream, save_checkpoint
from .exceptions import CrgError, NumericalError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crg",
        description="Test-time adaptation over precomputed embedding streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adapt over a manifest and write metrics")
    run.add_argument("--manifest", required=True, help="manifest JSON path")
    run.add_argument("--config", help="engine config JSON (field names match EngineConfig)")
    run.add_argument("--out", required=True, help="metrics JSON output path")
    run.add_argument("--log", help="per-sample JSONL log path")
    run.add_argument("--checkpoint", help="checkpoint path (written at end of run)")
    run.add_argument("--resume", action="store_true",
                     help="resume from --checkpoint instead of starting fresh")
    run.add_argument("--seed", type=int, help="override the run seed")
    # ablation toggles
    run.add_argument("--disable-gda", action="store_true",
                     help="final decisions use similarity matching only")
    run.add_argument("--disable-neg", action="store_true",
                     help="drop negative prototypes everywhere")
    run.add_argument("--disable-inter-text", action="store_true",
                     help="zero the text separation loss weight (xi1)")
    run.add_argument("--disable-pos-neg", action="store_true",
                     help="zero the positive/negative separation loss weight (xi2)")
    run.add_argument("--sim-pseudolabel", "--eq5-pseudolabel", action="store_true",
                     dest="sim_pseudolabel",
                     help="pseudo-labels from similarity logits instead of the GDA rule")
    run.add_argument("--raw-mean-negatives", action="store_true",
                     help="build negative prototypes from raw cache means")
    run.add_argument("--flip-confidence-threshold", action="store_true",
                     help="update the text cache above the entropy threshold instead of below")

    sim = sub.add_parser("simulate", help="write a synthetic manifest + blocks")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--classes", type=int, default=10)
    sim.add_argument("--dim", type=int, default=64)
    sim.add_argument("--samples", type=int, default=1000)
    sim.add_argument("--noise", type=float, default=0.0,
                     help="insertion-noise rate recorded in the manifest")
    sim.add_argument("--spread", type=float, default=0.3)
    sim.add_argument("--view-jitter", type=float, default=0.1)
    sim.add_argument("--text-jitter", type=float, default=0.1)
    sim.add_argument("--views", type=int, default=8)
    sim.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("report", help="render a metrics file")
    rep.add_argument("--metrics", required=True)
    rep.add_argument("--format", choices=("table", "csv", "json"), default="table")
    return parser


def apply_run_flags(config: EngineConfig, args: argparse.Namespace) -> EngineConfig:
    changes: dict = {}
    if args.disable_gda:
        changes["use_gda"] = False
    if args.disable_neg:
        changes["use_negatives"] = False
    if args.disable_inter_text:
        changes["xi1"] = 0.0
    if args.disable_pos_neg:
        changes["xi2"] = 0.0
    if args.sim_pseudolabel:
        changes["pseudo_label_rule"] = "sim"
    if args.raw_mean_negatives:
        changes["negatives_from"] = "raw_means"
    if args.flip_confidence_threshold:
        changes["text_update_on_low_entropy"] = False
    return config.replace(**changes) if changes else config


def _resolve_seed(args: argparse.Namespace, file_config: dict) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CRG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CrgError(f"CRG_SEED must be an integer, got {env!r}") from exc
    if "seed" in file_config:
        return int(file_config["seed"])
    return None


def _atomic_write(path: Path, payload: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    tmp.replace(path)


def cmd_run(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.manifest)
    file_config: dict = {}
    if args.config:
        file_config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(file_config, dict):
            raise CrgError("config file must hold a JSON object")
    seed = _resolve_seed(args, file_config)
    file_config.pop("d", None), file_config.pop("K", None)
    config = EngineConfig(d=manifest.d, K=manifest.K, **file_config)
    if seed is not None:
        config = config.replace(seed=seed)
    config = apply_run_flags(config, args)

    if args.resume:
        if not args.checkpoint:
            raise CrgError("--resume needs --checkpoint")
        state = load_checkpoint(args.checkpoint)
        if state.config != config:
            raise CrgError("checkpoint config does not match the requested run")
    else:
        text = read_text_block(resolve_block_path(args.manifest, manifest.text_path), manifest)
        state = EngineState.initial(text, config)

    log_stream = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        with read_samples(resolve_block_path(args.manifest, manifest.samples_path),
                          manifest) as reader:
            records = iter(reader)
            for _ in range(state.samples_seen):  # resume: skip processed records
                next(records, None)
            report = run_stream(state, records,
                                noise_rate=manifest.insertion_noise_rate,
                                log_stream=log_stream)
    finally:
        if log_stream is not None:
            log_stream.close()
    _atomic_write(Path(args.out), report.to_json())
    if args.checkpoint:
        save_checkpoint(state, args.checkpoint)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    config = SynthConfig(
        K=args.classes,
        d=args.dim,
        samples=args.samples,
        label_noise_rate=args.noise,
        class_spread=args.spread,
        view_jitter=args.view_jitter,
        text_jitter=args.text_jitter,
        n_views=args.views,
        seed=args.seed,
    )
    manifest_path = synth_write(config, args.out_dir)
    print(manifest_path)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = MetricsReport.from_json(Path(args.metrics).read_text(encoding="utf-8"))
    if args.format == "json":
        sys.stdout.write(report.to_json())
        return 0
    if args.format == "csv":
        sys.stdout.write("step,cache_error_rate\n")
        for i, rate in enumerate(report.error_rate_series):
            sys.stdout.write(f"{i},{rate!r}\n")
        return 0
    fmt = lambda v: "n/a" if v is None else f"{v:.6f}"
    rows = [
        ("samples", str(report.samples)),
        ("labeled samples", str(report.labeled_samples)),
        ("accuracy", fmt(report.accuracy)),
        ("ece (15 bins)", fmt(report.ece)),
        ("inserted", str(report.inserted)),
        ("replaced", str(report.replaced)),
        ("discarded", str(report.discarded)),
        ("degenerate rows", str(report.degenerate_rows)),
        ("numerical failures", str(report.numerical_failures)),
        ("final cache error rate",
         fmt(report.error_rate_series[-1] if report.error_rate_series else None)),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "simulate": cmd_simulate, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except NumericalError as exc:
        print(f"crg: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (CrgError, OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        print(f"crg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
