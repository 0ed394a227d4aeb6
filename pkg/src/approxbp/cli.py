"""Command-line interface: ``approxbp fit | gradcheck | train | memreport``.

Exit codes: 0 success, 1 a check or invariant failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, _jsonio
from .approximator import SAConfig, coeffile, fit
from .approximator.coeffile import CoefficientFileError
from .approximator.functions import constraint_residual
from .memledger import SCHEMES, ConfigError as BlockConfigError, analytic_block, format_table
from .stepgrad import LevelsError
from .tape.config import (
    ACTIVATIONS,
    NORMS,
    TOY_BLOCK_CONFIG,
    DEFAULT_CONFIG,
    ConfigError,
    apply_overrides,
    build_graph,
    load_config,
)
from .tape.train import TrainingError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("approxbp")


class UsageError(Exception):
    pass


def _sidecar(out, suffix):
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


def _check_writable(*paths):
    for path in paths:
        parent = Path(path).parent
        if not parent.is_dir():
            raise UsageError(f"cannot write {path}: directory {parent} does not exist")
        if not os.access(parent, os.W_OK) or (Path(path).exists() and not os.access(path, os.W_OK)):
            raise UsageError(f"cannot write {path}: permission denied")


def _write_manifest(command, args, outputs, manifest_path):
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "func", "verbose")}
    manifest = {
        "command": command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "outputs": list(outputs),
    }
    _jsonio.dump(manifest, manifest_path)


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    if args.bits < 2:
        raise UsageError("--bits must be at least 2")
    if not 0.0 < args.epsilon < 1.0:
        raise UsageError("--epsilon must lie in (0, 1)")
    if args.restarts < 1:
        raise UsageError("--restarts must be at least 1")
    manifest = _sidecar(args.out, ".manifest.json")
    _check_writable(args.out, manifest)
    cfg = SAConfig(restarts=args.restarts, seed=args.seed)
    params = fit(args.activation, k=args.bits, mode=args.mode, config=cfg, epsilon=args.epsilon)
    coeffile.save(params, args.out)
    _write_manifest("fit", args, [args.out], manifest)
    print(f"objective_value {_jsonio.format_float(params.objective_value)}")
    print(f"constraint_residual {_jsonio.format_float(constraint_residual(params))}")
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def _load_model_config(path):
    if path is None:
        return DEFAULT_CONFIG
    if path == "toy":
        return TOY_BLOCK_CONFIG
    return load_config(path)


def cmd_gradcheck(args) -> int:
    from .tape.gradcheck import check_graph, check_node_kinds

    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    config = TOY_BLOCK_CONFIG if args.config is None else _load_model_config(args.config)
    graph = build_graph(config, seed=args.seed)
    worst = check_node_kinds(graph, trials=args.trials, seed=args.seed)

    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((4, config["input_dim"]))
    out_dim = next((n.params["W"].shape[0] for n in reversed(graph.nodes) if "W" in n.params),
                   config["input_dim"])
    if config.get("loss", "mse") == "ce":
        target = rng.integers(0, out_dim, 4)
    else:
        target = rng.standard_normal((4, out_dim))
    n_train = sum(v.size for v in graph.trainable_parameters().values())
    worst["graph"] = check_graph(graph.exact_twin(), x, target) if n_train else 0.0

    failed = False
    print(f"{'kind':<14} {'max_rel_err':>24}  result")
    for kind in sorted(worst):
        ok = worst[kind] <= args.tolerance
        failed |= not ok
        print(f"{kind:<14} {_jsonio.format_float(worst[kind]):>24}  {'PASS' if ok else 'FAIL'}")
    print(f"trainable parameters: {n_train}")
    if n_train == 0:
        print("note: no trainable parameters, only input gradients were checked")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------- train

def _write_csv(trace, path):
    lines = ["step,loss,grad_gap"]
    for r in trace:
        gap = "" if r.grad_gap is None else _jsonio.format_float(r.grad_gap)
        lines.append(f"{r.step},{_jsonio.format_float(r.loss)},{gap}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_params(graph, bin_path, json_path):
    params = graph.parameters()
    entries, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(data.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += data.size
    _jsonio.dump({"dtype": "float64", "byteorder": "little", "count": offset, "parameters": entries},
                 json_path)


def cmd_train(args) -> int:
    from .tape.experiment import run

    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    config = apply_overrides(_load_model_config(args.config), args.activation, args.norm)
    coefficients = None
    if args.coefficients is not None:
        if not Path(args.coefficients).is_file():
            raise UsageError(
                f"coefficient file {args.coefficients} not found; create one with "
                f"'approxbp fit --activation <gelu|silu> --out {args.coefficients}' "
                "or drop --coefficients to use the bundled coefficients")
        coefficients = {"gelu": args.coefficients, "silu": args.coefficients}
        if args.activation in ("regelu2", "resilu2"):
            coefficients = {ACTIVATIONS[args.activation][0]: args.coefficients}

    ledger_path = _sidecar(args.out, ".ledger.json")
    bin_path = _sidecar(args.out, ".params.bin")
    params_json = _sidecar(args.out, ".params.json")
    manifest = _sidecar(args.out, ".manifest.json")
    _check_writable(args.out, ledger_path, bin_path, params_json, manifest)

    result = run(config, seed=args.seed, steps=args.steps, coefficients=coefficients)
    _write_csv(result.trace, args.out)
    gaps = [r.grad_gap for r in result.trace if r.grad_gap is not None]
    report = result.ledger.report()
    report["per_node"] = result.ledger.per_node()
    report["final_loss"] = result.final_loss
    report["median_grad_gap"] = float(np.median(gaps)) if gaps else None
    report["nonfinite_inputs"] = int(result.graph.nonfinite)
    _jsonio.dump(report, ledger_path)
    _write_params(result.graph, bin_path, params_json)
    _write_manifest("train", args, [args.out, ledger_path, bin_path, params_json], manifest)
    print(f"final_loss {_jsonio.format_float(result.final_loss)}")
    if gaps:
        print(f"median_grad_gap {_jsonio.format_float(report['median_grad_gap'])}")
    print(format_table(report, "saved-for-backward bytes, one training batch"), end="")
    return EXIT_OK


# ---------------------------------------------------------------- memreport

def cmd_memreport(args) -> int:
    report = analytic_block(args.arch, args.scheme)
    table = format_table(report, f"{report['arch']} ({args.scheme})")
    if args.out is not None:
        manifest = _sidecar(args.out, ".manifest.json")
        _check_writable(args.out, manifest)
        _jsonio.dump(report, args.out)
        _write_manifest("memreport", args, [args.out], manifest)
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser():
    parser = argparse.ArgumentParser(prog="approxbp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"approxbp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a ReLU combination and write a coefficient file")
    p.add_argument("--activation", choices=["gelu", "silu"], default="gelu")
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--mode", choices=["primitive", "derivative"], default="primitive")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gradcheck", help="finite-difference check of every node kind in a model")
    p.add_argument("--config", default=None, help="model JSON (default: the toy block with every node kind)")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a model and write the loss trace plus memory ledger")
    p.add_argument("--config", default=None, help="model JSON (default: width-64 depth-2 MLP regression)")
    p.add_argument("--activation", choices=sorted(ACTIVATIONS), default=None)
    p.add_argument("--norm", choices=list(NORMS), default=None)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coefficients", default=None, help="coefficient or levels file for step activations")
    p.add_argument("--out", required=True, help="loss trace CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("memreport", help="analytic activation-memory breakdown of one block")
    p.add_argument("--arch", default="vit-b", help="vit-b, llama-13b or a block spec .json")
    p.add_argument("--scheme", choices=list(SCHEMES), default="baseline")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_memreport)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LevelsError, CoefficientFileError, TrainingError) as exc:
        print(f"approxbp {args.command}: validation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ConfigError, BlockConfigError) as exc:
        print(f"approxbp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"approxbp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"approxbp {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
