"""Command-line interface.

Subcommands cover the whole init -> fuse -> verify workflow plus parameter
counting and raw forward passes. Results go to stdout, diagnostics to
stderr. Exit codes:

    0  success (verify: models equivalent at tolerance)
    1  verify ran but the models differ beyond tolerance
    2  configuration or usage error
    3  file i/o or checkpoint format error
    4  fusion not applicable (topology / attention kind / already reduced)
    5  singular matrix encountered while fusing
    6  models not comparable in verify
    7  token id out of range

All randomness flows from explicit --seed flags.
"""

from __future__ import annotations

import argparse
import sys

from . import analysis, checkpoint
from .config import ModelConfig, PRESETS, Topology, parse_config
from .errors import (
    ApplicabilityError,
    CheckpointError,
    ConfigError,
    ConfigMismatch,
    InvalidModel,
    SingularMatrix,
    TokenOutOfRange,
)
from .fusion import FusionVariant, fold_q_parallel, fuse_model, run_equivalence
from .model import model_forward, random_model

# Refuse to materialize anything bigger than this without --force; the
# presets alone would be tens of gigabytes as f64.
MAX_UNFORCED_WEIGHTS = 50_000_000


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_config(name: str) -> ModelConfig:
    return parse_config(name)


def cmd_init(args) -> int:
    config = _load_config(args.config)
    report = analysis.count_weights(config)
    if args.count_only:
        print(analysis.render_table(config, report, name=args.config))
        return 0
    if args.out is None:
        return _fail("--out is required unless --count-only is given", 2)
    if report.total > MAX_UNFORCED_WEIGHTS and not args.force:
        return _fail(
            f"refusing to materialize {report.total:,} weights "
            f"(> {MAX_UNFORCED_WEIGHTS:,}); pass --force to override", 2,
        )
    model = random_model(config, seed=args.seed, scale=args.scale)
    checkpoint.save(model, args.dtype, args.out)
    print(analysis.render_table(config, report, name=args.config))
    print(f"wrote {args.out} (dtype {args.dtype}, seed {args.seed})")
    return 0


def cmd_fuse(args) -> int:
    model = checkpoint.load(args.input)
    before = analysis.count_stored_weights(model)
    if model.config.topology is Topology.PARALLEL:
        if args.variant != "q":
            raise ApplicabilityError(
                f"variant {args.variant} is not applicable to parallel models; "
                "only the parallel Q-fold is exact"
            )
        fused = fold_q_parallel(model)
    else:
        fused = fuse_model(model, FusionVariant(args.variant))
    after = analysis.count_stored_weights(fused)
    checkpoint.save(fused, args.dtype, args.out)
    print(f"weights before: {before}")
    print(f"weights after: {after}")
    print(f"delta: {before - after}")
    print(f"wrote {args.out} (form {fused.config.reduced_form.value})")
    return 0


def cmd_verify(args) -> int:
    model_a = checkpoint.load(args.a)
    model_b = checkpoint.load(args.b)
    report = run_equivalence(model_a, model_b, n_tokens=args.tokens,
                             seed=args.seed, tol=args.tol)
    print(f"tokens_tested: {report.tokens_tested}")
    print(f"seed: {report.seed}")
    for i, diff in enumerate(report.per_layer_max_abs):
        label = "embedding" if i == 0 else f"block {i - 1}"
        print(f"per_layer_max_abs[{label}]: {diff:.6e}")
    print(f"max_abs_diff: {report.max_abs_diff:.6e}")
    print(f"max_rel_diff: {report.max_rel_diff:.6e}")
    print(f"tolerance: {report.tolerance:.6e}")
    print(f"passed: {'true' if report.passed else 'false'}")
    return 0 if report.passed else 1


def cmd_count(args) -> int:
    config = _load_config(args.config)
    report = analysis.count_weights(config)
    if args.machine:
        print("\n".join(analysis.machine_lines(config, report)))
    else:
        print(analysis.render_table(config, report, name=args.config))
    return 0


def cmd_forward(args) -> int:
    model = checkpoint.load(args.model)
    try:
        tokens = [int(tok) for tok in args.tokens.split(",") if tok.strip() != ""]
    except ValueError:
        return _fail(f"--tokens must be comma-separated integers, got {args.tokens!r}", 2)
    hidden, logits = model_forward(model, tokens)
    out = hidden if args.hidden else logits
    for row in out:
        print(" ".join(f"{value:.17g}" for value in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skipfuse",
        description="Weight fusion for skipless transformers: drop Q/K/V and P "
                    "projections without changing the model function.",
        epilog=f"presets: {', '.join(sorted(PRESETS))}",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="write a randomly initialized full-form checkpoint")
    p_init.add_argument("--config", required=True, help="config file or preset name")
    p_init.add_argument("--seed", type=int, default=0)
    p_init.add_argument("--scale", type=float, default=None,
                        help="weight stddev (default 1/sqrt(d))")
    p_init.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p_init.add_argument("--out", default=None)
    p_init.add_argument("--count-only", action="store_true",
                        help="print the weight table and write nothing")
    p_init.add_argument("--force", action="store_true",
                        help="materialize even very large models")
    p_init.set_defaults(handler=cmd_init)

    p_fuse = sub.add_parser("fuse", help="apply a fusion variant to a checkpoint")
    p_fuse.add_argument("--in", dest="input", required=True)
    p_fuse.add_argument("--variant", choices=("q", "k", "v"), required=True)
    p_fuse.add_argument("--out", required=True)
    p_fuse.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p_fuse.set_defaults(handler=cmd_fuse)

    p_verify = sub.add_parser("verify", help="compare two checkpoints numerically")
    p_verify.add_argument("--a", required=True)
    p_verify.add_argument("--b", required=True)
    p_verify.add_argument("--tokens", type=int, default=64)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--tol", type=float, default=1e-9)
    p_verify.set_defaults(handler=cmd_verify)

    p_count = sub.add_parser("count", help="print weight counts, savings and speedup")
    p_count.add_argument("--config", required=True)
    p_count.add_argument("--machine", action="store_true",
                         help="key=value output instead of the table")
    p_count.set_defaults(handler=cmd_count)

    p_forward = sub.add_parser("forward", help="run a forward pass and print the result")
    p_forward.add_argument("--model", required=True)
    p_forward.add_argument("--tokens", required=True, help='comma-separated ids, e.g. "3,1,4"')
    group = p_forward.add_mutually_exclusive_group()
    group.add_argument("--logits", action="store_true", default=True)
    group.add_argument("--hidden", action="store_true", default=False)
    p_forward.set_defaults(handler=cmd_forward)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.handler(args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    except (CheckpointError, InvalidModel) as exc:
        return _fail(str(exc), 3)
    except ApplicabilityError as exc:
        return _fail(str(exc), 4)
    except SingularMatrix as exc:
        return _fail(str(exc), 5)
    except ConfigMismatch as exc:
        return _fail(str(exc), 6)
    except TokenOutOfRange as exc:
        return _fail(str(exc), 7)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
