"""Command-line front end.

Exit codes: 0 success, 2 usage or validation error, 3 training failed on the
data (too many samples with zero probability during coarse-graining).
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .formats import FormatError, dumps_data, load_data, load_model, save_model, _atomic_write
from .inference import compute_cone, cone_marginal, level_marginal
from .learning import CoarseGrainError, Dataset, Method, TrainingConfig, train, windowed_loglik
from .model import ancestral_sample, parameter_count, random_model
from .lattice import LatticeError, build_hierarchy
from .stochastic import unflatten

EXIT_USAGE = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    s = f"{x:.12f}"
    return "0.000000000000" if s == "-0.000000000000" else s


def _load_dataset(path, model) -> Dataset:
    x, alphabet = load_data(path)
    if x.shape[0] == 0:
        raise UsageError(f"{path}: dataset is empty")
    if alphabet is not None and alphabet != model.alphabet:
        raise UsageError(f"{path}: alphabet {alphabet} does not match model ({model.alphabet})")
    if x.shape[1] != model.hierarchy.base_size:
        raise UsageError(f"{path}: samples have {x.shape[1]} sites, model has "
                         f"{model.hierarchy.base_size}")
    return Dataset(0, x, model.alphabet)


def cmd_init(args):
    h = build_hierarchy(args.size, args.levels)
    model = random_model(h, args.alphabet, args.concentration,
                         np.random.default_rng(args.seed), tied=not args.untied)
    save_model(args.out, model)


def cmd_train(args):
    model = load_model(args.model)
    data = _load_dataset(args.data, model)
    config = TrainingConfig(window_length=args.window, method=Method(args.method),
                            passes=args.passes, em_iters=args.em_iters, em_tol=args.em_tol,
                            smoothing=args.alpha, seed=args.seed,
                            posterior_draws=args.draws)
    result = train(model, data, config)
    save_model(args.out, result.model)
    if args.trace:
        lines = ["# pass layer iter objective"]
        lines += [f"{r.pass_index} {r.layer} {r.iteration} {r.objective!r}"
                  for r in result.trace]
        _atomic_write(args.trace, "\n".join(lines) + "\n")


def cmd_eval(args):
    model = load_model(args.model)
    data = _load_dataset(args.data, model)
    print(_fmt(windowed_loglik(model, data, args.window)))


def cmd_marginal(args):
    model = load_model(args.model)
    N = model.hierarchy.base_size
    if not 1 <= args.length <= N:
        raise UsageError(f"--length must be in [1, {N}]")
    sites = [(args.start + t) % N for t in range(args.length)]
    dist = cone_marginal(model, sites).dist
    for k, p in enumerate(dist.probs):
        tup = ",".join(map(str, unflatten(k, model.alphabet, args.length)))
        print(f"{tup} {p:.17g}")


def cmd_sample(args):
    model = load_model(args.model)
    if args.count < 1:
        raise UsageError("--count must be positive")
    x = ancestral_sample(model, np.random.default_rng(args.seed), args.count)
    text = dumps_data(x, model.alphabet)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _atomic_write(args.out, text)


def cmd_inspect(args):
    model = load_model(args.model)
    h = model.hierarchy
    levels = range(h.num_levels + 1) if args.level is None else [args.level]
    if args.level is not None and not 0 <= args.level <= h.num_levels:
        raise UsageError(f"--level must be in [0, {h.num_levels}]")
    widths = {}
    for L in range(1, 5):
        if L > h.base_size:
            continue
        per_level = [0] * (h.num_levels + 1)
        for start in range(h.base_size):
            cone = compute_cone(h, [(start + t) % h.base_size for t in range(L)])
            per_level = [max(a, b) for a, b in zip(per_level, cone.widths)]
        widths[L] = per_level
    print(f"# alphabet {model.alphabet} base_size {h.base_size} levels {h.num_levels} "
          f"tied {str(model.tied).lower()}")
    print(f"# parameters {model.num_parameters} formula "
          f"{parameter_count(h, model.alphabet, model.tied)}")
    cols = " ".join(f"cone_L{L}" for L in range(1, 5))
    print(f"# level size layer_params {cols} entropy_w{args.window}")
    for j in levels:
        size = h.size(j)
        params = model.layer(j).num_parameters if j >= 1 else 0
        ws = " ".join(str(widths[L][j]) if L in widths else "-" for L in range(1, 5))
        w = min(args.window, size)
        ent = level_marginal(model, j, range(w)).entropy()
        print(f"{j} {size} {params} {ws} {ent:.12f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cora", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a random model")
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--levels", type=int, required=True)
    s.add_argument("--alphabet", type=int, default=2)
    s.add_argument("--concentration", type=float, default=1.0)
    s.add_argument("--untied", action="store_true", help="one table per site")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("train", help="fit a model to a data file")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=[m.value for m in Method], default="layerwise")
    s.add_argument("--window", type=int, default=3)
    s.add_argument("--passes", type=int, default=1)
    s.add_argument("--em-iters", type=int, default=20)
    s.add_argument("--em-tol", type=float, default=1e-6)
    s.add_argument("--alpha", type=float, default=1e-3)
    s.add_argument("--draws", type=int, default=1, help="posterior draws per sample")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="average per-window log-likelihood in nats")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--window", type=int, default=3)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("marginal", help="exact marginal of a level-0 window")
    s.add_argument("--model", required=True)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--length", type=int, required=True)
    s.set_defaults(func=cmd_marginal)

    s = sub.add_parser("sample", help="ancestral samples as a data file")
    s.add_argument("--model", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("inspect", help="per-level diagnostics")
    s.add_argument("--model", required=True)
    s.add_argument("--level", type=int)
    s.add_argument("--window", type=int, default=3)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CoarseGrainError as e:
        print(f"cora: training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (UsageError, LatticeError, FormatError, ValueError, OSError) as e:
        print(f"cora: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
