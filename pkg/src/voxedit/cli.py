"""Command-line interface: every library capability behind one entry point.

Machine-readable results go to stdout as JSON; artifacts are written only
through explicit --out flags; diagnostics go to stderr.  Exit codes:
0 success, 1 operation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import VoxeditError
from .flow import FlowEditConfig, euler_sample, flowedit_run, make_analytic_oracle
from .grid import SparseStructure, StructuredLatent, make_sparse
from .merge import (
    CONNECTIVITIES,
    DEFAULT_CONNECTIVITY,
    DiffMap,
    FlipMask,
    Threshold,
    TopK,
    apply_flip,
    diff_xor,
    label_components,
    mask_all,
    select_components,
    slat_merge,
)
from .mesh import load_obj, save_obj, extract_surface_mesh, voxelize_mesh
from .metrics import chamfer_voxels, occupancy_iou, region_consistency
from .nvx import inspect_nvx, read_nvx, write_nvx
from .pipeline import mock_backend_suite, run_pipeline


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=False)
    sys.stdout.write("\n")


def _read_structure(path) -> SparseStructure:
    payload = read_nvx(path)
    if not isinstance(payload, SparseStructure):
        raise VoxeditError(f"{path} holds a latent payload, expected occupancy")
    return payload


def _read_latent(path) -> StructuredLatent:
    payload = read_nvx(path)
    if not isinstance(payload, StructuredLatent):
        raise VoxeditError(f"{path} holds an occupancy payload, expected latent")
    return payload


def _mask_report(mask, components, policy) -> dict:
    return {
        "resolution": mask.resolution,
        "policy": policy.describe() | {"connectivity": components.connectivity},
        "component_sizes": components.sizes,
        "selected_sizes": list(mask.selected_sizes),
        "mask_size": mask.size,
        "coords": mask.coords.tolist(),
    }


def _mask_from_report(obj: dict) -> FlipMask:
    s = make_sparse(obj["coords"], obj["resolution"])
    return FlipMask(resolution=s.resolution, coords=s.coords,
                    selected_sizes=tuple(obj.get("selected_sizes", ())))


def _policy_from_args(args):
    if getattr(args, "top_k", None) is not None:
        return TopK(args.top_k)
    tau = getattr(args, "tau", None)
    return Threshold(tau if tau is not None else 100)


def _vector(text: str) -> np.ndarray:
    return np.array([float(p) for p in text.split(",")], dtype=np.float64)


# --- subcommand handlers -----------------------------------------------


def cmd_voxelize(args) -> int:
    mesh = load_obj(args.mesh)
    bounds = None
    if args.bounds is not None:
        b = args.bounds
        bounds = ((b[0], b[1], b[2]), (b[3], b[4], b[5]))
    s = voxelize_mesh(mesh, args.resolution, bounds)
    write_nvx(s, args.out)
    _emit({"out": str(args.out), "resolution": s.resolution, "voxel_sum": s.voxel_sum})
    return 0


def cmd_surface(args) -> int:
    s = _read_structure(args.input)
    mesh = extract_surface_mesh(s)
    save_obj(mesh, args.out)
    _emit({"out": str(args.out), "vertices": mesh.num_vertices, "triangles": mesh.num_triangles})
    return 0


def cmd_diff(args) -> int:
    d = diff_xor(_read_structure(args.src), _read_structure(args.tgt))
    if args.out:
        write_nvx(d.structure(), args.out)
    _emit({"diff_size": d.size, "out": str(args.out) if args.out else None})
    return 0


def cmd_components(args) -> int:
    s = _read_structure(args.input)
    d = DiffMap(resolution=s.resolution, coords=s.coords)
    cs = label_components(d, args.connectivity)
    _emit({"connectivity": cs.connectivity, "count": len(cs.components), "sizes": cs.sizes})
    return 0


def cmd_merge(args) -> int:
    s_src = _read_structure(args.src)
    s_tgt = _read_structure(args.tgt)
    policy = _policy_from_args(args)
    d = diff_xor(s_src, s_tgt)
    cs = label_components(d, args.connectivity)
    mask = select_components(cs, policy)
    merged = apply_flip(s_src, mask)
    write_nvx(merged, args.out)
    report = _mask_report(mask, cs, policy)
    if args.mask_out:
        Path(args.mask_out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    _emit({
        "out": str(args.out),
        "mask_out": str(args.mask_out) if args.mask_out else None,
        "diff_size": d.size,
        "component_sizes": report["component_sizes"],
        "selected_sizes": report["selected_sizes"],
        "merged_voxel_sum": merged.voxel_sum,
    })
    return 0


def cmd_slat_merge(args) -> int:
    z_src = _read_latent(args.src_slat)
    z_tgt = _read_latent(args.tgt_slat)
    merged = _read_structure(args.merged)
    if args.mask_all:
        mask = mask_all(merged)
    else:
        if not args.mask:
            raise VoxeditError("need --mask MASK.json (or --mask-all)")
        mask = _mask_from_report(json.loads(Path(args.mask).read_text(encoding="utf-8")))
    out = slat_merge(z_src, z_tgt, mask, merged)
    write_nvx(out, args.out)
    _emit({"out": str(args.out), "voxel_sum": out.voxel_sum, "channels": out.channels,
           "mask_size": mask.size})
    return 0


def _oracle_from_args(args):
    if args.oracle == "delta":
        return make_analytic_oracle("delta", anchors={
            "src": _vector(args.src_anchor), "tgt": _vector(args.tgt_anchor)})
    return make_analytic_oracle("gaussian",
                                means={"src": _vector(args.src_mean), "tgt": _vector(args.tgt_mean)},
                                variances={"src": args.src_var, "tgt": args.tgt_var})


def _flow_config(args) -> FlowEditConfig:
    fields = {}
    if args.config:
        fields.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for name, flag in (("steps", "steps"), ("n_max", "n_max"), ("n_min", "n_min"),
                       ("n_avg", "n_avg"), ("cfg_source_scale", "cfg_src"),
                       ("cfg_target_scale", "cfg_tgt"), ("lambda_src", "lambda_src"),
                       ("rng_seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            fields[name] = value
    return FlowEditConfig(**fields)


def cmd_flowedit(args) -> int:
    config = _flow_config(args)
    oracle = _oracle_from_args(args)
    x0 = _vector(args.x0)
    transcript = []
    on_step = transcript.append if args.transcript_out else None
    out = flowedit_run(x0, "src", "tgt", oracle, config, on_step=on_step)
    if args.transcript_out:
        with open(args.transcript_out, "w", encoding="utf-8") as fh:
            for row in transcript:
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    _emit({"output": out.tolist(), "displacement": (out - x0).tolist(),
           "config": {"steps": config.steps, "n_max": config.n_max, "n_min": config.n_min,
                      "n_avg": config.n_avg, "lambda_src": config.lambda_src,
                      "seed": config.rng_seed}})
    return 0


def cmd_sample(args) -> int:
    config = _flow_config(args)
    oracle = _oracle_from_args(args)
    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    start = _vector(args.start) if args.start else None
    out = euler_sample(oracle, args.condition, config, rng=rng, start=start)
    _emit({"output": out.tolist()})
    return 0


def cmd_chamfer(args) -> int:
    a = _read_structure(args.a)
    b = _read_structure(args.b)
    _emit({"chamfer": chamfer_voxels(a, b), "iou": occupancy_iou(a, b)
           if a.resolution == b.resolution else None})
    return 0


def cmd_consistency(args) -> int:
    s_src = _read_structure(args.src)
    s_tgt = _read_structure(args.tgt)
    merged = _read_structure(args.merged)
    mask = _mask_from_report(json.loads(Path(args.mask).read_text(encoding="utf-8")))
    rep = region_consistency(s_src, s_tgt, merged, mask)
    _emit({"outside_mask_iou": rep.outside_mask_iou,
           "inside_mask_match_fraction": rep.inside_mask_match_fraction,
           "mask_size": rep.mask_size, "diff_size": rep.diff_size})
    return 0


def cmd_pipeline_run(args) -> int:
    backends = mock_backend_suite(resolution=args.resolution, channels=args.channels)
    manifest = run_pipeline(
        out_dir=args.out_dir,
        n_samples=args.samples,
        backends=backends,
        merge_policy=_policy_from_args(args),
        connectivity=args.connectivity,
        seed=args.seed,
        max_attempts=args.max_attempts,
        workers=args.workers,
        manifest_name=args.manifest,
    )
    _emit({"manifest": str(manifest), "samples": args.samples})
    return 0


def cmd_inspect(args) -> int:
    _emit(inspect_nvx(args.input))
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxedit",
        description="Sparse-voxel editing toolkit: diff/merge, flow editing, metrics, pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("voxelize", help="voxelize an OBJ mesh into an occupancy NVX file")
    p.add_argument("--mesh", required=True, help="input OBJ path")
    p.add_argument("--resolution", type=int, default=64, help="grid resolution per axis")
    p.add_argument("--bounds", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   help="explicit bounds; default is the mesh AABB plus a margin")
    p.add_argument("--out", required=True, help="output NVX path")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("surface", help="export the exposed-face surface mesh of an NVX file")
    p.add_argument("input", help="occupancy NVX path")
    p.add_argument("--out", required=True, help="output OBJ path")
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("diff", help="XOR difference map of two occupancy NVX files")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", help="write the difference map as occupancy NVX")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("components", help="connectivity components of a difference-map NVX file")
    p.add_argument("input", help="occupancy NVX path holding the difference map")
    p.add_argument("--connectivity", type=int, choices=CONNECTIVITIES, default=DEFAULT_CONNECTIVITY)
    p.set_defaults(func=cmd_components)

    p = sub.add_parser("merge", help="region-aware merge of an edited structure into its source")
    p.add_argument("--src", required=True, help="source occupancy NVX")
    p.add_argument("--tgt", required=True, help="edited occupancy NVX")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--tau", type=int, help="select components larger than this size (default 100)")
    group.add_argument("--top-k", type=int, help="select the k largest components instead")
    p.add_argument("--connectivity", type=int, choices=CONNECTIVITIES, default=DEFAULT_CONNECTIVITY)
    p.add_argument("--out", required=True, help="merged occupancy NVX path")
    p.add_argument("--mask-out", help="write the mask + audit report as JSON")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("slat-merge", help="merge per-voxel latents under a flip mask")
    p.add_argument("--src-slat", required=True, help="source latent NVX")
    p.add_argument("--tgt-slat", required=True, help="edited latent NVX")
    p.add_argument("--merged", required=True, help="merged occupancy NVX")
    p.add_argument("--mask", help="mask JSON from `merge --mask-out`")
    p.add_argument("--mask-all", action="store_true",
                   help="take every merged voxel's latent from the target side")
    p.add_argument("--out", required=True, help="output latent NVX path")
    p.set_defaults(func=cmd_slat_merge)

    def add_flow_flags(p, oracle_required=True):
        p.add_argument("--steps", type=int, help="sampling steps (default 25)")
        p.add_argument("--n-max", dest="n_max", type=int, help="first active edit step (default 15)")
        p.add_argument("--n-min", dest="n_min", type=int, help="switch to plain sampling below this step (default 0)")
        p.add_argument("--n-avg", dest="n_avg", type=int, help="noise draws averaged per step (default 5)")
        p.add_argument("--cfg-src", dest="cfg_src", type=float, help="source guidance scale (default 1.5)")
        p.add_argument("--cfg-tgt", dest="cfg_tgt", type=float, help="target guidance scale (default 5.5)")
        p.add_argument("--lambda", dest="lambda_src", type=float, help="source-velocity weight (default 1.0)")
        p.add_argument("--seed", type=int, required=True, help="noise seed (required; no wall-clock seeding)")
        p.add_argument("--config", help="JSON file with config fields; flags override")
        p.add_argument("--oracle", choices=("delta", "gaussian"), required=oracle_required, default="delta")
        p.add_argument("--src-anchor", dest="src_anchor", default="0", help="delta oracle: source anchor, comma-separated")
        p.add_argument("--tgt-anchor", dest="tgt_anchor", default="1", help="delta oracle: target anchor, comma-separated")
        p.add_argument("--src-mean", dest="src_mean", default="0", help="gaussian oracle: source mean")
        p.add_argument("--tgt-mean", dest="tgt_mean", default="1", help="gaussian oracle: target mean")
        p.add_argument("--src-var", dest="src_var", type=float, default=1.0, help="gaussian oracle: source variance")
        p.add_argument("--tgt-var", dest="tgt_var", type=float, default=1.0, help="gaussian oracle: target variance")

    p = sub.add_parser("flowedit", help="run the edit integrator on an analytic velocity oracle")
    add_flow_flags(p)
    p.add_argument("--x0", required=True, help="source state, comma-separated floats")
    p.add_argument("--transcript-out", dest="transcript_out", help="write per-step JSONL transcript")
    p.set_defaults(func=cmd_flowedit)

    p = sub.add_parser("sample", help="plain Euler sampling of a guided analytic field")
    add_flow_flags(p)
    p.add_argument("--condition", default="tgt", help="condition label to sample (src or tgt)")
    p.add_argument("--start", help="state at t=1, comma-separated; drawn from --seed when omitted")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("chamfer", help="Chamfer distance between two occupancy NVX files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_chamfer)

    p = sub.add_parser("consistency", help="region-consistency report for a merge output")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--merged", required=True)
    p.add_argument("--mask", required=True, help="mask JSON from `merge --mask-out`")
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("pipeline", help="dataset-construction pipeline")
    psub = p.add_subparsers(dest="pipeline_command", required=True, metavar="ACTION")
    pr = psub.add_parser("run", help="run the mock-backed pipeline end to end")
    pr.add_argument("--out-dir", dest="out_dir", required=True, help="artifact + manifest directory")
    pr.add_argument("--manifest", default="manifest.jsonl", help="manifest filename inside --out-dir")
    pr.add_argument("--samples", type=int, required=True, help="number of samples to process")
    pr.add_argument("--seed", type=int, required=True, help="master seed (required)")
    pr.add_argument("--max-attempts", dest="max_attempts", type=int, default=1)
    group = pr.add_mutually_exclusive_group()
    group.add_argument("--tau", type=int, help="threshold policy (default 100)")
    group.add_argument("--top-k", type=int, help="top-k policy instead of threshold")
    pr.add_argument("--connectivity", type=int, choices=CONNECTIVITIES, default=DEFAULT_CONNECTIVITY)
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--resolution", type=int, default=32, help="mock generator grid resolution")
    pr.add_argument("--channels", type=int, default=8, help="mock generator latent channels")
    pr.set_defaults(func=cmd_pipeline_run)

    p = sub.add_parser("inspect", help="dump an NVX file's header after checksum validation")
    p.add_argument("input", help="NVX path")
    p.set_defaults(func=cmd_inspect)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VoxeditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
