"""Command-line interface: one executable, one subcommand per pipeline
stage.

Every run that writes an output file also writes ``<output>.manifest.json``
recording the subcommand, resolved flags, seed, input digests, and tool
version, so outputs are reproducible bit-for-bit from their manifests.
Diagnostics go to stderr; data goes to files or stdout. Exit codes:
0 success, 1 usage error, 2 runtime error. ``ED_ALIGN_THREADS`` caps
internal (BLAS) parallelism; 0 or unset means automatic.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise _UsageError(message)


def _sha256(path: str) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_path: str, subcommand: str, args: argparse.Namespace,
                    inputs: list[str]) -> None:
    from . import __version__

    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "subcommand": subcommand,
        "flags": flags,
        "seed": flags.get("seed"),
        "inputs": {p: _sha256(p) for p in inputs},
        "version": __version__,
    }
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _cmd_simplify(args) -> int:
    from .mesh import load_obj, save_obj
    from .simplify import qem_decimate

    mesh = load_obj(args.infile)
    result = qem_decimate(mesh, args.target_verts)
    if result.stalled:
        print(
            f"warning: stalled at {result.mesh.n_vertices} vertices "
            f"(target {args.target_verts})",
            file=sys.stderr,
        )
    save_obj(result.mesh, args.out)
    _write_manifest(args.out, "simplify", args, [args.infile])
    if args.map_out:
        lines = [f"{i} {c}" for i, c in enumerate(result.vertex_map.fine_to_coarse)]
        Path(args.map_out).write_text("\n".join(lines) + "\n")
        _write_manifest(args.map_out, "simplify", args, [args.infile])
    return 0


def _cmd_coarsen(args) -> int:
    from .hierarchy import build_hierarchy, hierarchy_report
    from .mesh import load_obj

    mesh = load_obj(args.infile)
    hierarchy = build_hierarchy(mesh, args.levels, args.seed)
    report = hierarchy_report(hierarchy)
    if args.out:
        Path(args.out).write_text(report)
        _write_manifest(args.out, "coarsen", args, [args.infile])
    else:
        sys.stdout.write(report)
    return 0


def _build_binding(mesh, method, levels, seed, knn_k):
    from .binding import bind_knn, bind_trace_propagate
    from .hierarchy import build_hierarchy

    hierarchy = build_hierarchy(mesh, levels, seed)
    if method == "trace":
        return hierarchy, bind_trace_propagate(hierarchy)
    return hierarchy, bind_knn(mesh, hierarchy.graph_level.positions, knn_k)


def _cmd_bind(args) -> int:
    from .binding import binding_diff, binding_dump
    from .mesh import load_obj

    mesh = load_obj(args.infile)
    hierarchy, table = _build_binding(
        mesh, args.method, args.levels, args.seed, args.knn_k
    )
    if args.compare:
        from .binding import bind_knn, bind_trace_propagate

        if args.compare == "trace":
            other = bind_trace_propagate(hierarchy)
        else:
            other = bind_knn(mesh, hierarchy.graph_level.positions, args.knn_k)
        text = binding_diff(table, other, args.method, args.compare)
    else:
        text = binding_dump(table, args.method)
    if args.out:
        Path(args.out).write_text(text)
        _write_manifest(args.out, "bind", args, [args.infile])
    else:
        sys.stdout.write(text)
    return 0


def _cmd_deform(args) -> int:
    from .deform import DeformGraph, apply_ed, read_transforms
    from .mesh import load_obj, save_obj

    mesh = load_obj(args.infile)
    hierarchy, table = _build_binding(
        mesh, args.binding, args.levels, args.seed, args.knn_k
    )
    params = read_transforms(Path(args.transforms).read_text())
    graph_level = hierarchy.graph_level
    if len(params) != graph_level.n_vertices:
        raise ValueError(
            f"transform file has {len(params)} records but the deformation "
            f"graph has {graph_level.n_vertices} nodes"
        )
    graph = DeformGraph(nodes=graph_level.positions, edges=graph_level.edges, params=params)
    deformed = mesh.with_vertices(apply_ed(mesh, graph, table))
    save_obj(deformed, args.out)
    _write_manifest(args.out, "deform", args, [args.infile, args.transforms])
    return 0


def _cmd_register(args) -> int:
    from .deform import write_transforms
    from .losses import LossWeights
    from .mesh import load_obj, save_obj
    from .registration import RegistrationConfig, register

    source = load_obj(args.source)
    target = load_obj(args.target)
    weights = LossWeights(
        lambda_edge=args.lambda_edge,
        lambda_lap=args.lambda_lap,
        lambda_arap=args.lambda_arap,
        beta=args.beta,
        use_cycle=not args.no_cycle,
    )
    config = RegistrationConfig(
        weights=weights,
        max_iters=args.iters,
        learning_rate=args.lr,
        cycle_iters=args.cycle_iters,
        rng_seed=args.seed,
        convergence_tol=args.tol,
        num_levels=args.levels,
        binding_method=args.binding,
        knn_k=args.knn_k,
    )
    report = register(source, target, config)
    save_obj(report.deformed_mesh(source), args.out)
    _write_manifest(args.out, "register", args, [args.source, args.target])

    if args.report:
        doc = {
            "converged": report.converged,
            "final_chamfer": report.final_chamfer,
            "iterations": report.iterations,
            "loss_trace": report.loss_trace,
            "wall_time_seconds": report.wall_time,
        }
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        _write_manifest(args.report, "register", args, [args.source, args.target])
    if args.transforms_out:
        Path(args.transforms_out).write_text(write_transforms(report.params_forward))
        _write_manifest(args.transforms_out, "register", args, [args.source, args.target])
    print(
        f"registered in {report.iterations} iterations, "
        f"final chamfer {report.final_chamfer:.6g}, converged={report.converged}",
        file=sys.stderr,
    )
    return 0


def _cmd_mmd(args) -> int:
    from .losses import bounded_mmd, mmd

    x = np.loadtxt(args.x, ndmin=2)
    y = np.loadtxt(args.y, ndmin=2)
    raw, _ = mmd(x, y)
    bounded, _ = bounded_mmd(x, y, beta=args.beta)
    sys.stdout.write(f"mmd: {raw:.12g}\nbounded_mmd: {bounded:.12g}\n")
    return 0


def _cmd_eiae_demo(args) -> int:
    from .canon import LoopTask, trace_csv, train_eiae
    from .losses import LossWeights

    weights = LossWeights(lambda_f=args.lambda_f, beta=args.beta)
    result = train_eiae(
        LoopTask(n_points=args.points),
        epochs=args.epochs,
        learning_rate=args.lr,
        weights=weights,
        rng_seed=args.seed,
        code_dim=args.e,
    )
    csv = trace_csv(result.trace)
    if args.out:
        Path(args.out).write_text(csv)
        _write_manifest(args.out, "eiae-demo", args, [])
    else:
        sys.stdout.write(csv)
    stats = result.roster_stats()
    print(
        f"final mmd {stats['mmd_mean']:.6g} (max {stats['mmd_max']:.6g}), "
        f"match accuracy {stats['match_accuracy']:.3f}",
        file=sys.stderr,
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="edalign", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simplify", help="quadric-error edge-collapse decimation")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--target-verts", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--map-out", default=None, help="write the fine-to-coarse vertex map")
    p.set_defaults(func=_cmd_simplify)

    p = sub.add_parser("coarsen", help="build and report the mesh hierarchy")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_coarsen)

    p = sub.add_parser("bind", help="dump or compare vertex-to-node bindings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("trace", "knn"), default="trace")
    p.add_argument("--knn-k", type=int, default=4)
    p.add_argument("--compare", choices=("trace", "knn"), default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bind)

    p = sub.add_parser("deform", help="apply a node transform file to a mesh")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--transforms", required=True, help="9 numbers per node, one line each")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binding", choices=("trace", "knn"), default="trace")
    p.add_argument("--knn-k", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_deform)

    p = sub.add_parser("register", help="fit node transforms aligning source to target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--transforms-out", default=None)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--no-cycle", action="store_true")
    p.add_argument("--cycle-iters", type=int, default=None)
    p.add_argument("--binding", choices=("trace", "knn"), default="trace")
    p.add_argument("--knn-k", type=int, default=4)
    p.add_argument("--lambda-arap", type=float, default=0.005)
    p.add_argument("--lambda-edge", type=float, default=0.005)
    p.add_argument("--lambda-lap", type=float, default=0.005)
    p.add_argument("--beta", type=float, default=0.01)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("mmd", help="kernel two-sample discrepancy of two matrices")
    p.add_argument("--x", required=True, help="whitespace-delimited numeric matrix")
    p.add_argument("--y", required=True)
    p.add_argument("--beta", type=float, default=0.01)
    p.set_defaults(func=_cmd_mmd)

    p = sub.add_parser(
        "eiae-demo",
        help="train the toy canonical-coordinate autoencoder on synthetic loops",
    )
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--e", type=int, default=10, help="canonical space dimension")
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-f", type=float, default=2.0,
                   help="feature-loss weight for the toy demo")
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--out", default=None, help="CSV trace path (stdout if omitted)")
    p.set_defaults(func=_cmd_eiae_demo)
    return parser


def _thread_limit():
    raw = os.environ.get("ED_ALIGN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n > 0:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    return contextlib.nullcontext()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        with _thread_limit():
            return args.func(args)
    except (BrokenPipeError, KeyboardInterrupt):
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
