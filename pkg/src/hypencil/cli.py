"""Batch front-end: build scenes from JSON configs, certify, probe, mesh.

Exit codes: 0 on success/pass, 1 on a certified failure (failed hypothesis,
non-hyperbolic flag), 2 on config or usage errors.  CSV columns are fixed
and printed with 12 significant digits so reports diff cleanly.  Set the
PENCIL_LOG environment variable to a logging level name for diagnostics.

Scene config schema (JSON object):

  model:      "warped_plane" | "warped_cover" | "exact_hyperbolic"
              | "euclidean_plane" | "star_graph"
  box:        {t_min, t_max, x_max, x2_max?}            (warped_plane)
  resolution: edge length h                             (mesh models)
  surface:    {squares, right_glue, top_glue}           (warped_cover)
  sheets:     unfolding layers                          (warped_cover)
  leaf:       {slope, basepoint, range}                 (warped_cover)
  dimension:  m                                         (exact_hyperbolic)
  embedding:  {kind: "pencil"|"identity"|"constant", n}
  certifier:  {epsilon, pairs, seed, depth}
  probe:      {box_sizes: [..], quadruples}
  out:        {certificate, pairs_csv, probe_csv, mesh_json}  (file names)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import certify as cert_mod
from .certify import (
    CertificationError,
    GridBundle,
    certify_embedding,
    default_grids,
    hyperbolicity_probe,
    probe_sweep,
    sweep_flags_nonhyperbolic,
)
from .hyperbolic import HPoint
from .models import (
    Leaf,
    SquareTiledSurface,
    constant_embedding,
    euclidean_plane_target,
    pencil_embedding,
    staircase_surface,
    warped_cover_target,
    warped_plane_target,
)
from .spaces import ExactHyperbolicSpace, MeshSpace, StarSpace, mesh_to_json

log = logging.getLogger("hypencil")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ConfigError("config must be a JSON object with a 'model' field")
    return cfg


def build_surface(cfg: dict) -> SquareTiledSurface:
    sdata = cfg.get("surface")
    if sdata is None:
        return staircase_surface()
    try:
        return SquareTiledSurface(
            int(sdata["squares"]),
            tuple(sdata["right_glue"]),
            tuple(sdata["top_glue"]),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad surface data: {err}") from err


def build_target(cfg: dict):
    model = cfg["model"]
    if model == "warped_plane":
        box = cfg.get("box") or {}
        try:
            return warped_plane_target(
                float(box["t_min"]), float(box["t_max"]), float(box["x_max"]),
                float(cfg["resolution"]), x2_max=box.get("x2_max"),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad warped_plane scene: {err}") from err
    if model == "warped_cover":
        box = cfg.get("box") or {}
        leaf_cfg = cfg.get("leaf") or {}
        leaf = None
        if leaf_cfg:
            slope = float(leaf_cfg.get("slope", (1 + 5 ** 0.5) / 2))
            base = tuple(leaf_cfg.get("basepoint", (0.28, 0.31)))
            leaf = Leaf(base, (1.0, slope))
        try:
            return warped_cover_target(
                build_surface(cfg),
                int(cfg.get("sheets", 1)),
                float(box["t_min"]), float(box["t_max"]),
                float(cfg["resolution"]),
                leaf=leaf,
                leaf_range=float(leaf_cfg.get("range", 0.9)),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad warped_cover scene: {err}") from err
    if model == "exact_hyperbolic":
        try:
            return ExactHyperbolicSpace(int(cfg.get("dimension", 2)))
        except ValueError as err:
            raise ConfigError(str(err)) from err
    if model == "euclidean_plane":
        try:
            return euclidean_plane_target(
                float(cfg.get("box", {}).get("x_max", 4.0)), float(cfg["resolution"])
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad euclidean scene: {err}") from err
    if model == "star_graph":
        return StarSpace(int(cfg.get("legs", 5)), float(cfg.get("leg_length", 8.0)))
    raise ConfigError(f"unknown model {model!r}")


def build_embedding(cfg: dict, target):
    emb = cfg.get("embedding") or {"kind": "pencil", "n": 2}
    kind = emb.get("kind", "pencil")
    n = int(emb.get("n", 2))
    if kind == "constant":
        if isinstance(target, ExactHyperbolicSpace):
            point = HPoint(np.zeros(target.dim - 1), 0.0)
        elif hasattr(target, "nearest_vertex"):
            point = 0
        else:
            point = (0, 0.0)
        return constant_embedding(target, point)
    if kind in ("pencil", "identity"):
        try:
            return pencil_embedding(target, None, n)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad embedding: {err}") from err
    raise ConfigError(f"unknown embedding kind {kind!r}")


def build_grids(cfg: dict, F, depth_override=None) -> GridBundle:
    depth = depth_override
    if depth is None:
        depth = (cfg.get("certifier") or {}).get("depth")
    return default_grids(F, depth=depth)


def _out_path(args, cfg, key, default):
    out = cfg.get("out") or {}
    name = out.get(key, default)
    base = Path(args.out) if args.out else Path(".")
    base.mkdir(parents=True, exist_ok=True)
    return base / name


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    target = build_target(cfg)
    F = build_embedding(cfg, target)
    cc = cfg.get("certifier") or {}
    seed = args.seed if args.seed is not None else int(cc.get("seed", 0))
    pairs = int(cc.get("pairs", 500))
    epsilon = args.epsilon if args.epsilon is not None else float(cc.get("epsilon", 1.0))
    grid = build_grids(cfg, F, depth_override=args.depth_L)
    log.info("certifying %s with %d pairs, seed %d", cfg["model"], pairs, seed)
    try:
        certificate, table, _ = certify_embedding(
            F, grid, pairs=pairs, seed=seed, epsilon=epsilon, threads=args.threads
        )
    except CertificationError as err:
        print(f"certification failed: {err}", file=sys.stderr)
        return EXIT_FAIL
    cert_path = _out_path(args, cfg, "certificate", "certificate.json")
    with open(cert_path, "w") as fh:
        json.dump(certificate.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = _out_path(args, cfg, "pairs_csv", "pairs.csv")
    with open(csv_path, "w") as fh:
        fh.write("d_hyperbolic,d_target,discrepancy\n")
        for dh, dx, disc in table:
            fh.write(f"{_fmt(dh)},{_fmt(dx)},{_fmt(disc)}\n")
    print(
        f"certificate: K={_fmt(certificate.K)} "
        f"sup_discrepancy={_fmt(certificate.empirical_sup_discrepancy)} "
        f"pass={certificate.passed}"
    )
    print(f"wrote {cert_path} and {csv_path}")
    return EXIT_PASS if certificate.passed else EXIT_FAIL


def _probe_factory(cfg):
    model = cfg["model"]
    if model == "euclidean_plane":
        return lambda size: euclidean_plane_target(size / 2.0, size / 50.0)
    if model == "exact_hyperbolic":
        dim = int(cfg.get("dimension", 2))
        return lambda size: ExactHyperbolicSpace(dim)
    if model == "star_graph":
        legs = int(cfg.get("legs", 5))
        return lambda size: StarSpace(legs, float(size))
    if model == "warped_plane":
        h = float(cfg["resolution"])
        return lambda size: warped_plane_target(-size / 2, size / 2, size / 2, h,
                                                x2_max=min(size / 2, 0.2))
    raise ConfigError(f"probe does not support model {model!r}")


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    pc = cfg.get("probe") or {}
    sizes = pc.get("box_sizes", [2.0, 4.0, 8.0])
    quadruples = int(pc.get("quadruples", 400))
    seed = args.seed if args.seed is not None else int(pc.get("seed", 0))
    factory = _probe_factory(cfg)
    rows = probe_sweep(factory, sizes, quadruples, seed=seed)
    csv_path = _out_path(args, cfg, "probe_csv", "probe.csv")
    with open(csv_path, "w") as fh:
        fh.write("box_size,delta_estimate\n")
        for size, val in rows:
            fh.write(f"{_fmt(size)},{_fmt(val)}\n")
    flagged = sweep_flags_nonhyperbolic(rows)
    for size, val in rows:
        print(f"box {size:g}: four-point defect {_fmt(val)}")
    print(f"wrote {csv_path}")
    if flagged:
        print("non-hyperbolic: defect grows with the box", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_PASS


def cmd_mesh(args) -> int:
    cfg = load_config(args.config)
    target = build_target(cfg)
    mesh = target.mesh if hasattr(target, "mesh") else target
    if not isinstance(mesh, MeshSpace):
        raise ConfigError(f"model {cfg['model']!r} does not build a mesh")
    print(f"mesh: {mesh.num_vertices} vertices, {mesh.num_edges} edges, "
          f"h={mesh.resolution}")
    report = {"vertices": mesh.num_vertices, "edges": mesh.num_edges,
              "resolution": mesh.resolution}
    if hasattr(target, "oracle"):
        err = _convergence_check(target, seed=args.seed or 0)
        report["max_relative_error"] = err
        print(f"convergence vs exact oracle: max relative error {_fmt(err)}")
    mesh_path = _out_path(args, cfg, "mesh_json", "mesh.json")
    with open(mesh_path, "w") as fh:
        fh.write(mesh_to_json(mesh))
    print(f"wrote {mesh_path}")
    return EXIT_PASS


def _convergence_check(target, seed=0, n_sources=6, per_source=25, min_sep=1.0):
    """Compare mesh distances against the exact oracle on interior pairs."""
    mesh = target.mesh
    rng = np.random.default_rng(seed)
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    margin = np.array([max(0.2, 10 * mesh.resolution)] * 2 + [0.5])
    top = np.array([0.0, 0.0, 2.0])
    mask = np.all((v >= lo + margin) & (v <= hi - margin - top), axis=1)
    idx = np.flatnonzero(mask)
    worst = 0.0
    for _ in range(n_sources):
        a = int(rng.choice(idx))
        d = mesh.distances_from(a)
        pa = HPoint(v[a][:-1], v[a][-1])
        picks = rng.choice(idx, size=per_source, replace=False)
        for b in picks:
            pb = HPoint(v[b][:-1], v[b][-1])
            exact = target.oracle.distance(pa, pb)
            if exact < min_sep:
                continue
            worst = max(worst, abs(d[b] - exact) / exact)
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hypencil",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", required=True, help="scene config JSON path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")
    parser.add_argument("--threads", type=int, default=1,
                        help="sample-loop parallelism; runs are deterministic at 1")
    parser.add_argument("--epsilon", type=float, default=None,
                        help="horocyclic threshold override")
    parser.add_argument("--depth-L", dest="depth_L", type=float, default=None,
                        help="truncation depth for sampled sides")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", help="run the full certification pipeline")
    sub.add_parser("probe", help="four-point hyperbolicity sweep over box sizes")
    sub.add_parser("mesh", help="build and export a mesh, with convergence report")

    # allow the subcommand to appear before the flags as well
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] in ("certify", "probe", "mesh"):
        argv = argv[1:] + [argv[0]]
        # argparse wants flags before the positional subcommand name; rotate
        argv = [a for a in argv if a not in ("certify", "probe", "mesh")] + \
               [a for a in argv if a in ("certify", "probe", "mesh")]

    level = os.environ.get("PENCIL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")

    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else 0
    try:
        if args.command == "certify":
            return cmd_certify(args)
        if args.command == "probe":
            return cmd_probe(args)
        return cmd_mesh(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except CertificationError as err:
        print(f"certification failed: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
