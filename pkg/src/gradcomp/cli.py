"""Command-line front end: ratio tables, training runs, verification.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 divergence.
Outputs are byte-stable: the same flags and seed always produce the same
bytes, so files can be diffed across runs and machines.
"""

import argparse
import json
import sys

from .catalogs import get_catalog, ratio_report, round_half_up
from .compressors import COMPRESSORS, make_compressor
from .linalg import ContractViolation
from .train import RunConfig, result_to_csv, result_to_json, run_training
from .verify import SUITES, run_suites

RATIO_SCHEMA = "gradcomp.ratio.v1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY_FAILED = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; 2 means verification failure
    here, so usage problems are remapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shape_str(shape):
    if shape is None:
        return "-"
    return "x".join(str(d) for d in shape)


def _rank_scaled(compressor_name):
    """True when the payload shrinks with rank, i.e. the `coeff/r` display
    applies; sign and dense payloads are rank-independent."""
    probe = (64, 48)
    one = make_compressor(compressor_name, 1).payload_bits(*probe)
    two = make_compressor(compressor_name, 2).payload_bits(*probe)
    return one != two


def _ratio_text(rep):
    lines = [f"catalog {rep.catalog}  compressor {rep.compressor}  rank {rep.rank}"]
    header = f"{'name':24s} {'tensor shape':16s} {'matrix shape':13s} {'KB':>8s}  ratio"
    lines.append(header)
    scaled = _rank_scaled(rep.compressor)
    for row in rep.rows:
        if row.coefficient is None:
            ratio = "1x (uncompressed)"
        elif scaled:
            ratio = f"{row.coefficient}/r x ({round_half_up(row.ratio_at_rank)}x at rank {rep.rank})"
        else:
            ratio = f"{round_half_up(row.ratio_at_rank)}x"
        lines.append(f"{row.name:24s} {_shape_str(row.tensor_shape):16s} "
                     f"{_shape_str(row.matrix_shape):13s} {row.kb:>8d}  {ratio}")
    lines.append(f"total {rep.total_mb} MB uncompressed")
    if scaled:
        lines.append(
            f"whole-model ratio {rep.total_coefficient}/r x -> "
            f"{rep.total_coefficient_at_rank}x normalized at rank {rep.rank}, "
            f"{rep.total_at_rank_display}x exact (biases kept raw)")
    else:
        lines.append(f"whole-model ratio {rep.total_at_rank_display}x")
    lines.append(
        f"data per epoch {rep.data_per_epoch_mb} MB vs "
        f"{rep.uncompressed_per_epoch_mb} MB uncompressed")
    return "\n".join(lines) + "\n"


def _ratio_csv(rep):
    lines = [
        f"# schema={RATIO_SCHEMA}",
        f"# catalog={rep.catalog} compressor={rep.compressor} rank={rep.rank}",
        f"# total_mb={rep.total_mb} total_coefficient={rep.total_coefficient}"
        f" total_ratio_at_rank={rep.total_ratio_at_rank}"
        f" data_per_epoch_mb={rep.data_per_epoch_mb}"
        f" uncompressed_per_epoch_mb={rep.uncompressed_per_epoch_mb}",
        "name,tensor_shape,matrix_shape,kb,coefficient,ratio_at_rank",
    ]
    for row in rep.rows:
        coeff = "" if row.coefficient is None else str(row.coefficient)
        ratio = "" if row.ratio_at_rank is None else str(row.ratio_at_rank)
        lines.append(f"{row.name},{_shape_str(row.tensor_shape)},"
                     f"{_shape_str(row.matrix_shape)},{row.kb},{coeff},{ratio}")
    return "\n".join(lines) + "\n"


def _ratio_json(rep):
    payload = {
        "schema": RATIO_SCHEMA,
        "catalog": rep.catalog,
        "compressor": rep.compressor,
        "rank": rep.rank,
        "total_mb": rep.total_mb,
        "total_coefficient": rep.total_coefficient,
        "total_ratio_at_rank": str(rep.total_ratio_at_rank),
        "data_per_epoch_mb": rep.data_per_epoch_mb,
        "uncompressed_per_epoch_mb": rep.uncompressed_per_epoch_mb,
        "rows": [
            {
                "name": row.name,
                "tensor_shape": list(row.tensor_shape) if row.tensor_shape else None,
                "matrix_shape": list(row.matrix_shape) if row.matrix_shape else None,
                "kb": row.kb,
                "coefficient": row.coefficient,
                "ratio_at_rank": None if row.ratio_at_rank is None else str(row.ratio_at_rank),
            }
            for row in rep.rows
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _emit(text, out_path):
    if out_path is None:
        sys.stdout.write(text)
        return
    with open(out_path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_ratio(args, parser):
    if args.compressor not in COMPRESSORS:
        parser.error(f"unknown compressor {args.compressor!r} "
                     f"(choices: {', '.join(sorted(COMPRESSORS))})")
    try:
        catalog = get_catalog(args.catalog)
        rep = ratio_report(catalog, args.compressor, args.rank)
    except (ContractViolation, OSError) as exc:
        parser.error(str(exc))
    if args.out is None:
        _emit(_ratio_text(rep), None)
    else:
        render = _ratio_json if args.format == "json" else _ratio_csv
        _emit(render(rep), args.out)
        sys.stdout.write(f"wrote {args.out}\n")
    return EXIT_OK


def cmd_train(args, parser):
    config = RunConfig(
        task=args.task, compressor=args.compressor, rank=args.rank,
        workers=args.workers, steps=args.steps, lr=args.lr,
        momentum=args.momentum, seed=args.seed, threads=args.threads)
    try:
        config.validate()
        result = run_training(config)
    except ContractViolation as exc:
        parser.error(str(exc))
    render = result_to_json if args.format == "json" else result_to_csv
    text = render(result)
    _emit(text, args.out)
    if args.out is not None:
        sys.stdout.write(
            f"wrote {args.out}: {len(result.records)} records, "
            f"final loss {result.final_loss!r}\n")
    if result.diverged:
        sys.stderr.write(f"diverged: {result.divergence_reason}\n")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args, parser):
    names = args.suites if args.suites else None
    if names:
        unknown = [n for n in names if n not in SUITES]
        if unknown:
            parser.error(f"unknown verify suite(s) {', '.join(unknown)} "
                         f"(choices: {', '.join(SUITES)})")
    results = run_suites(names)
    for res in results:
        sys.stdout.write(res.line() + "\n")
    failed = [res for res in results if not res.passed]
    if failed:
        sys.stdout.write(f"{len(failed)} of {len(results)} checks failed: "
                         + ", ".join(f"{r.suite}/{r.name}" for r in failed) + "\n")
        return EXIT_VERIFY_FAILED
    sys.stdout.write(f"all {len(results)} checks passed\n")
    return EXIT_OK


def _add_train_flags(sub, defaults):
    sub.add_argument("--task", default=defaults.task,
                     choices=("least-squares", "mlp", "catalog-only"))
    sub.add_argument("--compressor", default=defaults.compressor)
    sub.add_argument("--rank", type=int, default=defaults.rank)
    sub.add_argument("--workers", type=int, default=defaults.workers)
    sub.add_argument("--steps", type=int, default=defaults.steps)
    sub.add_argument("--lr", type=float, default=defaults.lr)
    sub.add_argument("--momentum", type=float, default=defaults.momentum)
    sub.add_argument("--seed", type=int, default=defaults.seed)
    sub.add_argument("--threads", type=int, default=defaults.threads)
    sub.add_argument("--out", default=None, help="output file (default: stdout)")
    sub.add_argument("--format", default="csv", choices=("csv", "json"))


def build_parser():
    parser = _Parser(prog="gradcomp",
                     description="Low-rank gradient compression simulator")
    commands = parser.add_subparsers(dest="command")
    defaults = RunConfig()

    ratio = commands.add_parser("ratio", help="compression ratio tables")
    ratio.add_argument("--catalog", default="resnet18",
                       help="builtin name (resnet18 | lstm) or a catalog file")
    ratio.add_argument("--compressor", default=defaults.compressor)
    ratio.add_argument("--rank", type=int, default=defaults.rank)
    ratio.add_argument("--out", default=None, help="output file (default: stdout text)")
    ratio.add_argument("--format", default="csv", choices=("csv", "json"))
    ratio.set_defaults(handler=cmd_ratio)

    train = commands.add_parser("train", help="run a simulated training job")
    _add_train_flags(train, defaults)
    train.set_defaults(handler=cmd_train)

    verify = commands.add_parser("verify", help="run verification suites")
    verify.add_argument("suites", nargs="*",
                        help=f"suites to run (default: all of {', '.join(SUITES)})")
    verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "handler", None) is None:
            parser.error("a command is required (ratio | train | verify)")
        return args.handler(args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
