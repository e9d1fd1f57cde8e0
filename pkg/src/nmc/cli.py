"""Command-line surface: encode, decode, eval, inspect, ablate.

Exit codes: 0 success, 1 quality-gate failure, 2 usage error, 3 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

from . import container as cont
from . import inr, metrics
from .io import load_mesh, save_mesh
from .mesh import MeshError, raw_size_bits


@dataclass(frozen=True)
class Preset:
    name: str
    v_coarse: int
    subdivisions: int
    layers: int
    width: int


PRESETS = {
    p.name: p
    for p in (
        Preset("85kb", 2000, 2, 20, 56),
        Preset("130kb", 2500, 2, 24, 70),
        Preset("187kb", 3000, 3, 28, 82),
        Preset("260kb", 3500, 3, 32, 96),
    )
}

EXIT_OK = 0
EXIT_GATE = 1
EXIT_USAGE = 2
EXIT_PIPELINE = 3


def _threads_arg(parser):
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("NMC_THREADS", "0")),
        help="cap worker threads (0 = library default); env NMC_THREADS",
    )


def _apply_threads(n: int) -> None:
    if n and n > 0:
        try:
            import numba

            numba.set_num_threads(max(1, min(n, numba.get_num_threads())))
        except Exception:
            pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmc",
        description="Compress a triangle mesh into a coarse base plus a "
        "quantized neural displacement field.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress a mesh into a container")
    enc.add_argument("input", help="input mesh (.obj / .ply)")
    enc.add_argument("output", help="output container path")
    enc.add_argument("--preset", choices=sorted(PRESETS), help="size preset")
    enc.add_argument("--v-coarse", type=int, help="coarse mesh vertex target")
    enc.add_argument("--subdivisions", type=int, help="midpoint subdivision count")
    enc.add_argument("--layers", type=int, help="hidden layer count")
    enc.add_argument("--width", type=int, help="hidden layer width")
    enc.add_argument("--ring-layers", type=int, default=4,
                     help="leading layers with one-ring accumulation (default 4)")
    enc.add_argument("--frequencies", type=int, default=10,
                     help="positional encoding octaves (default 10)")
    enc.add_argument("--epochs", type=int, default=3500)
    enc.add_argument("--batch-size", type=int, default=2048)
    enc.add_argument("--lr", type=float, default=1e-3)
    enc.add_argument("--seed", type=int, default=0)
    enc.add_argument("--no-prune", action="store_true")
    enc.add_argument("--prune-target", type=float, default=0.5,
                     help="kept weight fraction after pruning (default 0.5)")
    enc.add_argument("--prune-epochs", type=str,
                     help="comma-separated prune epochs (default auto)")
    enc.add_argument("--no-quant", action="store_true")
    enc.add_argument("--no-ec", action="store_true", help="disable entropy coding")
    enc.add_argument("--no-gt-bound", action="store_true",
                     help="skip the remeshing quality-bound evaluation")
    enc.add_argument("--metric-samples", type=int, default=20000)
    enc.add_argument("--loss-csv", help="write per-epoch loss history CSV here")
    enc.add_argument("--triangulate-quads", action="store_true")
    enc.add_argument("--json", action="store_true")
    _threads_arg(enc)

    dec = sub.add_parser("decode", help="reconstruct a mesh from a container")
    dec.add_argument("input", help="container path")
    dec.add_argument("output", help="output mesh (.ply default encoding, or .obj)")
    dec.add_argument("--json", action="store_true")
    _threads_arg(dec)

    ev = sub.add_parser("eval", help="point-to-mesh quality between two meshes")
    ev.add_argument("mesh_a")
    ev.add_argument("mesh_b")
    ev.add_argument("-n", "--samples", type=int, default=metrics.DEFAULT_SAMPLES)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--max-dpm", type=float, help="fail (exit 1) above this d_pm")
    ev.add_argument("--max-dnorm", type=float, help="fail (exit 1) above this d_norm (deg)")
    ev.add_argument("--json", action="store_true")
    _threads_arg(ev)

    ins = sub.add_parser("inspect", help="byte breakdown of a container")
    ins.add_argument("input")
    ins.add_argument("--json", action="store_true")
    _threads_arg(ins)

    abl = sub.add_parser("ablate", help="remeshing quality grid (coarse size x subdivisions)")
    abl.add_argument("input")
    abl.add_argument("--v-coarse", type=str, default="500,1000,2000",
                     help="comma-separated coarse vertex targets")
    abl.add_argument("--subdivisions", type=str, default="2,3",
                     help="comma-separated subdivision levels")
    abl.add_argument("-n", "--samples", type=int, default=50000)
    abl.add_argument("--seed", type=int, default=0)
    abl.add_argument("--out", help="write CSV here (default stdout)")
    abl.add_argument("--json", action="store_true")
    abl.add_argument("--triangulate-quads", action="store_true")
    _threads_arg(abl)
    return parser


def _encode_settings(args) -> cont.EncodeSettings:
    preset = PRESETS.get(args.preset) if args.preset else None
    v_coarse = args.v_coarse if args.v_coarse is not None else (preset.v_coarse if preset else None)
    s = args.subdivisions if args.subdivisions is not None else (preset.subdivisions if preset else None)
    layers = args.layers if args.layers is not None else (preset.layers if preset else None)
    width = args.width if args.width is not None else (preset.width if preset else None)
    missing = [n for n, v in
               (("--v-coarse", v_coarse), ("--subdivisions", s),
                ("--layers", layers), ("--width", width)) if v is None]
    if missing:
        raise UsageError(f"missing {', '.join(missing)} (give a --preset or explicit flags)")
    prune_epochs = None
    if args.prune_epochs:
        prune_epochs = tuple(int(x) for x in args.prune_epochs.split(","))
    cfg = inr.InrConfig(
        hidden_layers=layers,
        hidden_width=width,
        ring_layers=args.ring_layers,
        frequencies=args.frequencies,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr0=args.lr,
        seed=args.seed,
    )
    return cont.EncodeSettings(
        v_coarse=v_coarse,
        subdivision_level=s,
        inr=cfg,
        prune=not args.no_prune,
        prune_target=args.prune_target,
        prune_epochs=prune_epochs,
        quantize=not args.no_quant,
        entropy_code=not args.no_ec,
        compute_gt_bound=not args.no_gt_bound,
        metric_samples=args.metric_samples,
    )


class UsageError(Exception):
    pass


def cmd_encode(args) -> int:
    settings = _encode_settings(args)
    mesh = load_mesh(args.input, triangulate_quads=args.triangulate_quads)
    t0 = time.perf_counter()
    container, report = cont.encode(mesh, settings)
    container.write(args.output)
    wall = time.perf_counter() - t0
    if args.loss_csv:
        with open(args.loss_csv, "w") as fh:
            fh.write(inr.loss_history_csv(report.history))
    payload = report.to_dict()
    payload["wall_seconds"] = round(wall, 3)
    payload["output"] = args.output
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"encoded {args.input} -> {args.output} in {wall:.1f}s")
        print(f"  original: {report.original_vertices} verts / {report.original_faces} faces "
              f"({report.raw_bits / 8 / 1024:.1f} KB raw)")
        print(f"  coarse:   {report.coarse_vertices} verts / {report.coarse_faces} faces"
              + (" (stopped early)" if report.decimation_stopped_early else ""))
        print(f"  container: {report.container_bytes / 1024:.1f} KB "
              f"(ratio {report.compression_ratio:.1f}x)")
        print(f"  final loss {report.final_loss:.3e}, kept weights {report.sparsity:.3f}")
        if report.gt_d_pm is not None:
            print(f"  remesh bound: d_pm {report.gt_d_pm * 1e4:.2f}e-4, "
                  f"d_norm {report.gt_d_norm:.2f} deg")
    return EXIT_OK


def cmd_decode(args) -> int:
    container = cont.CompressedContainer.read(args.input)
    t0 = time.perf_counter()
    mesh = cont.decode(container)
    wall = time.perf_counter() - t0
    save_mesh(mesh, args.output)
    if args.json:
        print(json.dumps({
            "output": args.output,
            "vertices": mesh.n_vertices,
            "faces": mesh.n_faces,
            "decode_seconds": round(wall, 3),
        }, indent=2))
    else:
        print(f"decoded {args.input} -> {args.output} "
              f"({mesh.n_vertices} verts / {mesh.n_faces} faces) in {wall:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    a = load_mesh(args.mesh_a)
    b = load_mesh(args.mesh_b)
    report = metrics.compare_meshes(a, b, n=args.samples, seed=args.seed)
    payload = report.to_dict()
    gate_failed = (args.max_dpm is not None and report.d_pm > args.max_dpm) or (
        args.max_dnorm is not None and report.d_norm > args.max_dnorm
    )
    payload["gate_failed"] = gate_failed
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"d_pm   = {report.d_pm:.6e}  (x1e4: {report.d_pm * 1e4:.3f}; "
              f"a->b {report.d_ab:.3e}, b->a {report.d_ba:.3e})")
        print(f"d_norm = {report.d_norm:.3f} deg  ({report.samples} samples/direction)")
        if gate_failed:
            print("quality gate FAILED")
    return EXIT_GATE if gate_failed else EXIT_OK


def cmd_inspect(args) -> int:
    container = cont.CompressedContainer.read(args.input)
    info = cont.inspect(container)
    actual = os.path.getsize(args.input)
    info["file_bytes"] = actual
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        c = info["config"]
        print(f"config: Q={c['Q']} l={c['l']} k={c['k']} g={c['g']} s={c['s']} "
              f"activation={c['activation']}")
        print(f"coarse mesh: {info['coarse_vertices']} verts / {info['coarse_faces']} faces")
        print(f"parameters: {info['parameter_count']} "
              f"({'8-bit codes' if info['payload_quantized'] else 'float32'}), "
              f"zero fraction {info['decoded_zero_fraction']:.3f}")
        for name, size in info["bytes"].items():
            print(f"  {name:28s} {size:>10d} B")
        print(f"file size on disk: {actual} B")
    if info["bytes"]["total"] != actual:
        print("WARNING: computed total differs from file size", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def cmd_ablate(args) -> int:
    mesh = load_mesh(args.input, triangulate_quads=args.triangulate_quads)
    v_list = [int(x) for x in args.v_coarse.split(",")]
    s_list = [int(x) for x in args.subdivisions.split(",")]
    rows = metrics.ablate_remesh(mesh, v_list, s_list, n=args.samples, seed=args.seed)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        csv = metrics.ablation_csv(rows)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(csv)
            print(f"wrote {args.out}")
        else:
            print(csv, end="")
    errors = [r for r in rows if "error" in r]
    if errors and len(errors) == len(rows):
        return EXIT_PIPELINE
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    handlers = {
        "encode": cmd_encode,
        "decode": cmd_decode,
        "eval": cmd_eval,
        "inspect": cmd_inspect,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except cont.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (MeshError, cont.ContainerError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
