"""Command line front door: backend setup, stats, training, eval, serving."""

import argparse
import json
import sys
from pathlib import Path

from faceshape.world import BackendDescriptor, build_backend


def _cmd_make_backend(args):
    descriptor = BackendDescriptor(
        seed=args.seed, n_styles=args.n_styles, style_dim=args.style_dim,
        height=args.height, width=args.width, stroke_sigma=args.stroke_sigma,
        dtype=args.dtype)
    backend = build_backend(descriptor)
    descriptor.save(args.out)
    print(f"wrote {args.out}")
    print(f"parameter checksum {backend.parameter_checksum()}")


def _cmd_fit_stats(args):
    from faceshape.stats import save_correlation
    from faceshape.training import fit_backend_stats

    backend = build_backend(BackendDescriptor.load(args.backend))
    stats, corr = fit_backend_stats(backend, n_samples=args.samples,
                                    seed=args.seed)
    stats.save(args.out)
    print(f"wrote {args.out} ({args.samples} samples)")
    if args.correlation_out:
        save_correlation(corr, args.correlation_out)
        print(f"wrote {args.correlation_out}")


def _cmd_train(args):
    from faceshape.training import TrainingConfig, train

    config = TrainingConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.steps is not None:
        config.steps = args.steps
    if args.backend is not None:
        config.backend = BackendDescriptor.load(args.backend)
    metrics = args.metrics or str(Path(args.out).with_suffix(".metrics.jsonl"))
    train(config, args.out, metrics_path=metrics,
          resume_from=args.resume_from, progress=True)
    print(f"wrote {args.out}")


def _cmd_evaluate(args):
    from faceshape.evaluation import evaluate

    report = evaluate(args.checkpoint, n_faces=args.faces,
                      edits_per_face=args.edits, seed=args.seed,
                      rounds=args.rounds)
    print(json.dumps(report.to_dict(), indent=2))
    if args.out:
        report.save(args.out)
        print(f"wrote {args.out}", file=sys.stderr)


def _cmd_ablate(args):
    from faceshape.evaluation import ablation_suite, format_ablation_table
    from faceshape.training import TrainingConfig

    config = TrainingConfig.load(args.config)
    seeds = tuple(args.seeds) if args.seeds else None
    variants = tuple(args.variants) if args.variants else None
    kwargs = {}
    if variants:
        kwargs["variants"] = variants
    results = ablation_suite(config, args.out, seeds=seeds,
                             n_faces=args.faces, edits_per_face=args.edits,
                             progress=True, **kwargs)
    print(format_ablation_table(results))


def _cmd_serve(args):
    from faceshape.service import run_service

    run_service(args.checkpoint, host=args.host, port=args.port,
                snapshot_dir=args.snapshot_dir)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faceshape",
        description="Deterministic semantic face-shape editing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-backend",
                       help="create and describe a synthetic face backend")
    p.add_argument("--out", required=True, help="descriptor file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-styles", type=int, default=4)
    p.add_argument("--style-dim", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--stroke-sigma", type=float, default=1.5)
    p.add_argument("--dtype", choices=("float32", "float64"),
                   default="float32")
    p.set_defaults(func=_cmd_make_backend)

    p = sub.add_parser("fit-stats",
                       help="fit feature statistics over backend samples")
    p.add_argument("--backend", required=True, help="descriptor file")
    p.add_argument("--out", required=True, help="stats file to write")
    p.add_argument("--correlation-out", help="correlation file to write")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_stats)

    p = sub.add_parser("train", help="train the editor against a backend")
    p.add_argument("--config", required=True, help="training config file")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--steps", type=int, help="override config steps")
    p.add_argument("--backend", help="override backend descriptor file")
    p.add_argument("--metrics", help="metrics JSONL path")
    p.add_argument("--resume-from", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="run the random-edit protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--faces", type=int, default=1000)
    p.add_argument("--edits", type=int, default=5)
    p.add_argument("--seed", type=int, default=900000)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare loss ablations")
    p.add_argument("--config", required=True, help="base training config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--variants", nargs="+")
    p.add_argument("--faces", type=int, default=200)
    p.add_argument("--edits", type=int, default=5)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP edit service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--snapshot-dir", help="persist sessions to this directory")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
