"""Command-line entry points: gen-data, train, eval, inspect, render.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numerical error.
Every command that writes files also writes one JSON manifest next to them.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, TopologyMismatchError, load_checkpoint, save_checkpoint
from .data import DatasetError, generate_synthetic, read_dataset, stack_samples, write_dataset
from .linalg import PoleError
from .mobius import (
    AffineMapError,
    DegenerateFilterError,
    count_parameters,
    init_network,
    mobius_fixed_points,
    block_widths,
    pole_margins,
)
from .skeleton import SkeletonTopology, TopologyError, load_topology
from .training import (
    DegeneratePoseError,
    TrainConfig,
    TrainingError,
    compute_context,
    deterministic_mode,
    evaluate_model,
    predict_mm,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- manifests

def manifest_path_for(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".manifest.json")


def write_manifest(path: Path, command: str, config: dict, seed, topology_hash, artifacts: dict,
                   started: float, started_wall: str) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "topology_hash": topology_hash,
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "deterministic": deterministic_mode(),
        "timings": {"started_at": started_wall, "wall_clock_s": time.perf_counter() - started},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(artifact: Path) -> dict | None:
    path = manifest_path_for(artifact)
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"unreadable manifest {path}: {exc}") from None


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _topology(path) -> SkeletonTopology:
    return load_topology(path) if path else load_topology()


def _check_data_topology(data: Path, expected: str) -> None:
    """Refuse a dataset whose manifest records a different skeleton."""
    manifest = read_manifest(data)
    if manifest is not None and manifest.get("topology_hash") not in (None, expected):
        raise TopologyMismatchError(expected, manifest["topology_hash"])


def _config_dict(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.noise_px < 0:
        raise UsageError("--noise-px must be non-negative")
    t0, wall = time.perf_counter(), _now()
    topo = _topology(args.topology)
    samples = generate_synthetic(args.count, topo, seed=args.seed, noise_px=args.noise_px)
    out = Path(args.out)
    write_dataset(samples, out)
    write_manifest(manifest_path_for(out), "gen-data", _config_dict(args), args.seed, topo.hash(),
                   {"dataset": out}, t0, wall)
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        config = TrainConfig(
            learning_rate=args.lr, batch_size=args.batch, max_epochs=args.epochs, seed=args.seed,
            plateau_patience=args.patience, val_fraction=args.val_fraction,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0, wall = time.perf_counter(), _now()
    topo = _topology(args.topology)
    data = Path(args.data)
    _check_data_topology(data, topo.hash())
    samples = read_dataset(data, topo)
    net = init_network(block_widths(args.width), topo, args.seed)
    out = Path(args.out)
    metrics = out.with_name(out.name + ".metrics.csv")
    with open(metrics, "w", encoding="utf-8", newline="\n") as log:
        result = train(net, samples, config, log=log, progress=_progress if args.verbose else None)
    save_checkpoint(out, net, result.stats)
    last = result.history[-1] if result.history else None
    write_manifest(manifest_path_for(out), "train", _config_dict(args), args.seed, topo.hash(),
                   {"checkpoint": out, "metrics": metrics}, t0, wall)
    print(f"parameters {count_parameters(net)}")
    if last is not None:
        print(f"epoch {last.epoch} train_loss {last.train_loss:.6g} val_loss {last.val_loss:.6g} lr {last.lr:.3g}")
    print(f"wrote {out}")
    return EXIT_OK


def _progress(rec) -> None:
    print(f"epoch {rec.epoch:5d}  train {rec.train_loss:.6g}  val {rec.val_loss:.6g}  lr {rec.lr:.3g}",
          file=sys.stderr, flush=True)


def cmd_eval(args) -> int:
    t0, wall = time.perf_counter(), _now()
    ckpt, data = Path(args.checkpoint), Path(args.data)
    net, stats = load_checkpoint(ckpt, _topology(args.topology) if args.topology else None)
    _check_data_topology(data, net.topology.hash())
    if stats is None:
        raise CheckpointError(f"{ckpt} carries no normalization statistics; it cannot be evaluated")
    samples = read_dataset(data, net.topology)
    if not samples:
        raise DatasetError(f"{data} contains no samples")
    with compute_context():
        report = evaluate_model(net, stats, samples, calibrate=not args.no_calibration)
    names = list(net.topology.joint_names)
    # everything is computed before the first byte is written
    report_path = Path(args.report)
    report_path.write_text(report.csv(names, args.per_joint), encoding="utf-8")
    write_manifest(manifest_path_for(report_path), "eval", _config_dict(args), None, net.topology.hash(),
                   {"report": report_path}, t0, wall)
    sys.stdout.write(report.text(names, args.per_joint))
    return EXIT_OK


def _fmt_c(z: complex) -> str:
    return f"{z.real:+.6e}{z.imag:+.6e}j"


def cmd_inspect(args) -> int:
    net, _ = load_checkpoint(Path(args.checkpoint))
    dec = net.decomposition
    out = [f"topology {net.topology.hash()}", f"widths {net.widths}",
           f"parameters {count_parameters(net)}", "eigenvalues of the normalized Laplacian:"]
    out += [f"  {i:3d} {lam:.12e}" for i, lam in enumerate(dec.eigenvalues)]
    for k, blk in enumerate(net.blocks):
        coeffs = blk.coefficients
        det = coeffs.determinant()
        try:
            margins = pole_margins(dec, coeffs)
            out.append(f"block {k} ({blk.activation}): min pole margin {margins.min():.6e}")
        except DegenerateFilterError as exc:
            margins = None
            out.append(f"block {k} ({blk.activation}): degenerate coefficients ({exc})")
        out.append("  idx  determinant                              |det|          margin         fixed points")
        for i in range(len(det)):
            try:
                fp = mobius_fixed_points(coeffs.a[i], coeffs.b[i], coeffs.c[i], coeffs.d[i])
                fixed = f"{_fmt_c(fp.gamma1)}  {_fmt_c(fp.gamma2)}"
            except AffineMapError:
                fixed = "none (c = 0)"
            margin = f"{margins[i]:.6e}" if margins is not None else "n/a"
            out.append(f"  {i:3d}  {_fmt_c(det[i])}  {abs(det[i]):.6e}  {margin}  {fixed}")
    print("\n".join(out))
    return EXIT_OK


_AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
SVG_SIZE = 400
SVG_MM_PER_PX = 6.0


def render_svg(poses, topo: SkeletonTopology, axes: str, styles) -> str:
    """Orthographic drawing of root-relative poses; one ``<line>`` per edge per pose."""
    ia, ib = _AXES[axes]
    half = SVG_SIZE / 2
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    for pose, (label, colour) in zip(poses, styles):
        p = np.asarray(pose)
        u = half + p[:, ia] / SVG_MM_PER_PX
        v = half + p[:, ib] / SVG_MM_PER_PX
        lines.append(f'<g class="{label}" stroke="{colour}" stroke-width="2">')
        for i, j in topo.edges:
            lines.append(f'<line x1="{u[i]:.3f}" y1="{v[i]:.3f}" x2="{u[j]:.3f}" y2="{v[j]:.3f}"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    if args.limit < 1:
        raise UsageError("--limit must be at least 1")
    t0, wall = time.perf_counter(), _now()
    data = Path(args.data)
    net = stats = None
    if args.checkpoint:
        net, stats = load_checkpoint(Path(args.checkpoint))
        topo = net.topology
        if stats is None:
            raise CheckpointError(f"{args.checkpoint} carries no normalization statistics")
    else:
        topo = _topology(args.topology)
    _check_data_topology(data, topo.hash())
    samples = read_dataset(data, topo)[: args.limit]
    j2, j3 = stack_samples(samples)
    gt = j3 - j3[:, topo.root_index:topo.root_index + 1] if samples else j3
    pred = None
    if net is not None and samples:
        with compute_context():
            pred = predict_mm(net, stats, j2)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for k in range(len(samples)):
        poses, styles = [gt[k]], [("ground-truth", "black")]
        if pred is not None:
            poses.append(pred[k])
            styles.append(("prediction", "red"))
        path = out_dir / f"sample_{k:04d}_{args.axes}.svg"
        path.write_text(render_svg(poses, topo, args.axes, styles), encoding="utf-8")
        written[f"svg{k}"] = path
    write_manifest(out_dir / "manifest.json", "render", _config_dict(args), None, topo.hash(),
                   written, t0, wall)
    print(f"wrote {len(written)} SVG files to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mobiusgcn", description="Spectral Möbius graph networks for 2D-to-3D pose lifting.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic pose dataset")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-px", type=float, default=0.0)
    g.add_argument("--topology", default=None, help="skeleton file (default: bundled 16-joint skeleton)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--width", type=int, default=64, choices=[64, 128])
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--patience", type=int, default=5, help="plateau patience in epochs")
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--topology", default=None)
    t.add_argument("--verbose", action="store_true", help="per-epoch progress on stderr")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="CSV report path")
    e.add_argument("--per-joint", action="store_true")
    e.add_argument("--no-calibration", action="store_true", help="skip bone-length calibration")
    e.add_argument("--topology", default=None, help="refuse checkpoints built for another skeleton")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="print spectrum and filter diagnostics")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect)

    r = sub.add_parser("render", help="write SVG skeleton drawings")
    r.add_argument("--data", required=True)
    r.add_argument("--checkpoint", default=None)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--axes", default="xy", choices=sorted(_AXES))
    r.add_argument("--limit", type=int, default=8, help="number of samples to draw")
    r.add_argument("--topology", default=None)
    r.set_defaults(func=cmd_render)
    return ap


USAGE_ERRORS = (UsageError, TopologyMismatchError, TopologyError)
RUNTIME_ERRORS = (
    OSError, DatasetError, CheckpointError, TrainingError, PoleError, DegenerateFilterError,
    DegeneratePoseError, FloatingPointError, ValueError,
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
