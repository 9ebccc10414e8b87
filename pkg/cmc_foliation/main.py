#!/usr/bin/env python3
"""
cmc-foliation command line.

    cmc-foliation validate [--config FILE] [--out DIR] [--seed N] [--verbosity 0|1|2]
    cmc-foliation solve    --config FILE --out RUN_DIR
    cmc-foliation foliate  --out RUN_DIR
    cmc-foliation export   --out RUN_DIR
    cmc-foliation report   --out RUN_DIR

A run directory holds:
    manifest.txt        versions, seed, tolerances, branch anchors, peak memory
    config.env          the resolved run configuration (reloadable with --config)
    fields/leaf_XXX.csv one conformal-factor field per leaf
    summary.csv         per-leaf residuals and Newton iterations
    convergence.jsonl   every continuation step
    failure.txt         only when the solve failed

Exit codes: 0 pass, 1 validation or solve failure, 2 usage or config error,
130 on interrupt.
"""

import argparse
import json
import platform
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy
from loguru import logger

from . import __version__
from .cmc_solver import (
    MODE_CLOSED,
    MODE_DISC,
    CmcContext,
    ContinuationEntry,
    ContinuationResult,
    closed_surface_context,
    continuation,
    disc_context,
    mean_curvature_residual,
    residual_G,
    sample_lattice,
)
from .conformal import HoloMap
from .config import COMMANDS, RunConfig, configure_logging, env_overrides, load_run_config, parse_params
from .epstein import fd_geometry
from .errors import CmcError, ConfigError, MissingArtifacts
from .exports import (
    read_field_csv,
    read_kv,
    write_epstein_obj,
    write_field_csv,
    write_kv,
    write_matrix_market,
    write_mesh_obj,
    write_samples_csv,
    write_table_csv,
)
from .foliation import Foliation, assemble_foliation, check_foliation
from .surface_mesh import QDField, build_octagon_surface, manufactured_qd_field
from .validation import format_table, run_suite

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPT = 130

MANIFEST = "manifest.txt"
CONFIG_COPY = "config.env"
SUMMARY = "summary.csv"
CONVERGENCE = "convergence.jsonl"
FAILURE = "failure.txt"
FIELDS_DIR = "fields"


# --- context and run directory ---


def build_context(params: Dict) -> CmcContext:
    if params["mode"] == MODE_DISC:
        f = HoloMap.cubic(params["epsilon"]) if params["developing_map"] == "cubic" else HoloMap.identity()
        return disc_context(f, params["grid_points"], params["disc_radius"])
    mesh = build_octagon_surface(params["subdiv"])
    if params["phi_file"]:
        data = np.loadtxt(params["phi_file"], delimiter=",", comments="#", ndmin=2)
        qd = QDField(data[:, 0] + 1j * data[:, 1], name=Path(params["phi_file"]).stem)
    else:
        qd = manufactured_qd_field(mesh, params["phi_sup_norm"])
    return closed_surface_context(mesh, qd)


def leaf_path(run_dir: Path, index: int) -> Path:
    return run_dir / FIELDS_DIR / f"leaf_{index:03d}.csv"


def write_manifest(cfg: RunConfig, extra: Optional[Dict] = None) -> None:
    manifest = {
        "command": cfg.command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": cfg.seed,
        "config_path": str(cfg.config_path or ""),
        **{f"param_{k}": v for k, v in cfg.params.items()},
    }
    manifest.update(extra or {})
    write_kv(cfg.out_dir / MANIFEST, manifest)
    write_kv(cfg.out_dir / CONFIG_COPY, cfg.params)


def write_continuation(cfg: RunConfig, ctx: CmcContext, result: ContinuationResult) -> None:
    out = cfg.out_dir
    (out / FIELDS_DIR).mkdir(parents=True, exist_ok=True)
    rows = []
    for i, entry in enumerate(result.entries):
        write_field_csv(leaf_path(out, i), entry.H, ctx.space.points, entry.v, entry.u)
        rows.append(
            {
                "index": i,
                "H": entry.H,
                "residual_norm": entry.residual_norm,
                "residual_sup": entry.residual_sup,
                "mean_curvature_residual": float(np.abs(mean_curvature_residual(entry.H, ctx, entry.u)).max()),
                "newton_iters": entry.newton_iters,
                "branch": entry.branch,
                "u_min": float(entry.u.min()),
                "u_max": float(entry.u.max()),
            }
        )
    write_table_csv(out / SUMMARY, rows)
    with open(out / CONVERGENCE, "w", encoding="utf-8") as fh:
        for step in result.steps:
            fh.write(json.dumps(step, sort_keys=True) + "\n")


def load_run(run_dir: Path) -> Tuple[Dict, CmcContext, ContinuationResult]:
    """(params, ctx, result) rebuilt from a completed run directory."""
    if not (run_dir / CONFIG_COPY).is_file() or not (run_dir / SUMMARY).is_file():
        raise MissingArtifacts(f"{run_dir} is not a completed run directory (needs {CONFIG_COPY} and {SUMMARY})")
    params = parse_params(read_kv(run_dir / CONFIG_COPY))
    files = sorted((run_dir / FIELDS_DIR).glob("leaf_*.csv"))
    if not files:
        raise MissingArtifacts(f"No leaf fields under {run_dir / FIELDS_DIR}")
    ctx = build_context(params)
    entries = []
    for path in files:
        H, points, v = read_field_csv(path)
        if len(v) != ctx.space.size:
            raise MissingArtifacts(f"{path} has {len(v)} values, the rebuilt context has {ctx.space.size} nodes")
        g = residual_G(H, ctx, v)
        entries.append(ContinuationEntry(H, v, ctx.space.l2_norm(g), float(np.abs(g).max()), 0, "loaded"))
    manifest = read_kv(run_dir / MANIFEST) if (run_dir / MANIFEST).is_file() else {}
    return params, ctx, ContinuationResult(entries, anchors=manifest.get("anchors", "loaded"))


# --- commands ---


def cmd_validate(cfg: RunConfig) -> int:
    logger.info(f"🚀 Validating invariants (seed {cfg.seed})")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    results = run_suite(cfg.params, cfg.seed, cfg.solver_config())
    table = format_table(results)
    print(table)
    write_table_csv(cfg.out_dir / "invariants.csv", [r.as_row() for r in results])
    failed = [r for r in results if not r.passed]
    write_manifest(cfg, {"invariants": len(results), "failed": len(failed)})
    if failed:
        logger.error(f"❌ {len(failed)} of {len(results)} invariants failed")
        return EXIT_FAILURE
    logger.info(f"✅ All {len(results)} invariants passed")
    return EXIT_OK


def cmd_solve(cfg: RunConfig) -> int:
    p = cfg.params
    solver_cfg = cfg.solver_config()
    ctx = build_context(p)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"🚀 Solving {ctx.describe()} over [{p['h_lo']}, {p['h_hi']}] into {cfg.out_dir}")
    try:
        result = continuation(
            (p["h_lo"], p["h_hi"]), ctx, solver_cfg, n_leaves=p["n_leaves"], cross_check=p["cross_check"], anchor_h=p["anchor_h"]
        )
    except ConfigError:
        raise
    except CmcError as e:
        failed_H = getattr(e, "H", None)
        history = getattr(e, "history", None) or []
        write_kv(
            cfg.out_dir / FAILURE,
            {
                "error": type(e).__name__,
                "message": str(e),
                "H": "" if failed_H is None else failed_H,
                "history": " ".join(f"{r:.6e}" for r in history),
            },
        )
        write_manifest(cfg, {"status": "failed", "failed_H": "" if failed_H is None else failed_H})
        logger.error(f"❌ Solve failed at H={failed_H}: {type(e).__name__}: {e}")
        return EXIT_FAILURE

    write_continuation(cfg, ctx, result)
    write_manifest(
        cfg,
        {
            "status": "ok",
            "context": ctx.describe(),
            "anchors": result.anchors,
            "leaves": len(result.entries),
            "max_residual": result.max_residual(),
            "cross_check": "" if result.cross_check is None else result.cross_check,
            "peak_rss_mb": round(result.peak_rss_mb, 1),
        },
    )
    print(f"{'H':>10} {'|G|_L2':>11} {'|G|_sup':>11} {'iters':>5}")
    for e in result.entries:
        print(f"{e.H:>10.6f} {e.residual_norm:>11.3e} {e.residual_sup:>11.3e} {e.newton_iters:>5d}")
    logger.info(f"📊 {len(result.entries)} leaves, max residual {result.max_residual():.3e}, peak RSS {result.peak_rss_mb:.1f} MB")
    return EXIT_OK


def cmd_foliate(cfg: RunConfig) -> int:
    params, ctx, result = load_run(cfg.out_dir)
    logger.info(f"🚀 Assembling foliation of {len(result.entries)} leaves from {cfg.out_dir}")
    fol = assemble_foliation(result, ctx, params["sample_radius"], params["sample_points"], params["fd_step"])
    report = check_foliation(fol)
    write_kv(cfg.out_dir / "foliation_report.txt", report.as_dict())
    write_table_csv(cfg.out_dir / "leaves.csv", report.leaf_rows)
    if fol.has_geometry:
        write_samples_csv(
            cfg.out_dir / "samples.csv", [(e.H, s) for e, samples in zip(fol.entries, fol.leaf_samples) for s in samples]
        )
    for key, value in report.as_dict().items():
        print(f"{key:>24}: {value}")
    if not report.passed:
        logger.error(f"❌ Foliation checks failed: {'; '.join(report.failures)}")
        return EXIT_FAILURE
    logger.info("✅ Foliation checks passed")
    return EXIT_OK


def cmd_export(cfg: RunConfig) -> int:
    params, ctx, result = load_run(cfg.out_dir)
    out = cfg.out_dir / "exports"
    out.mkdir(exist_ok=True)
    logger.info(f"🚀 Exporting {len(result.entries)} leaves to {out}")
    write_matrix_market(out / "stiffness.mtx", ctx.space.stiffness, comment=ctx.describe())
    if ctx.mode == MODE_CLOSED:
        write_mesh_obj(out / "mesh.obj", ctx.mesh)
        for i, entry in enumerate(result.entries):
            write_mesh_obj(out / f"leaf_{i:03d}.obj", ctx.mesh, heights=entry.u)
        logger.info("✅ Mesh and leaf height fields exported")
        return EXIT_OK

    fol = Foliation(result.entries, ctx)
    lattice = sample_lattice(params["sample_radius"], params["sample_points"])
    rows = []
    for i, entry in enumerate(result.entries):
        sampler = fol.sampler(i)
        dropped = write_epstein_obj(
            out / f"leaf_{i:03d}.obj", sampler, params["export_radius"], params["export_resolution"], comment=f"H={entry.H!r}"
        )
        if dropped:
            logger.warning(f"⚠️ Leaf {i} (H={entry.H:.4f}): {dropped} grid points outside the sampler domain")
        rows.extend((entry.H, fd_geometry(sampler, z, params["fd_step"])) for z in lattice)
    write_samples_csv(out / "diagnostics.csv", rows)
    logger.info(f"✅ {len(result.entries)} OBJ leaves and diagnostics exported")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    summary = cfg.out_dir / SUMMARY
    if not summary.is_file():
        raise MissingArtifacts(f"No {SUMMARY} in {cfg.out_dir}")
    print(summary.read_text(encoding="utf-8"), end="")
    report = cfg.out_dir / "foliation_report.txt"
    if report.is_file():
        for key, value in read_kv(report).items():
            print(f"{key:>24}: {value}")
    return EXIT_OK


COMMAND_TABLE = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "foliate": cmd_foliate,
    "export": cmd_export,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmc-foliation", description="CMC Epstein surfaces and monotone foliations in H^3")
    parser.add_argument("command", choices=COMMANDS, help="What to run")
    parser.add_argument("--config", type=Path, default=None, help="Flat KEY=value run configuration")
    parser.add_argument("--out", type=Path, default=None, help="Run directory (default: $CMC_OUT_DIR or runs/<command>)")
    parser.add_argument("--seed", type=int, default=None, help="Seed for randomized invariants (default: $CMC_SEED or 0)")
    parser.add_argument("--verbosity", type=int, choices=(0, 1, 2), default=1, help="0 warnings, 1 info, 2 debug")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        configure_logging(args.verbosity, env_overrides().get("log_level"))
        cfg = load_run_config(args.command, args.config, args.out, args.seed, args.verbosity)
        return COMMAND_TABLE[args.command](cfg)
    except ConfigError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_CONFIG
    except CmcError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.warning("⚠️ Interrupted")
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
