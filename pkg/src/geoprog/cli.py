"""Command-line surface: synthesize, ingest, georeference, render, query, eval.

Configuration comes from an optional TOML file (``--config`` flag or the
``GEOPROG_CONFIG`` environment variable); command-line flags win over file
values. All commands exit 1 with the underlying error message on config
or input problems; ``eval`` never fails on low scores.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, fields

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import EngineError
from .georef import ControlPointSet, GeoTransform, estimate_transform
from .grids import save_mask_png
from .gvapi import GeoEngine
from .harness import load_dataset, run_benchmark
from .programs import ICEStore, execute_program, generate_program
from .providers import (HttpDetector, HttpEmbedder, HttpGenerator,
                        OracleDetector, OracleEmbedder, OracleGenerator,
                        ProviderEndpoint)
from .registry import load_registry
from .render import render_topdown, save_render_pngs
from .scene import load_scene, save_scene
from .grids import Segment, TopDownView


@dataclass
class EngineConfig:
    scene: str = None
    registry: str = None
    transform: str = "embedded"   # "embedded" | path to a transform JSON
    providers: str = "oracle"     # "oracle" | "http"
    endpoint: str = ""            # base URL for http mode
    programs: str = None          # oracle generator program map (JSON)
    tau: float = 0.5
    ice: str = None               # ICE store JSON path
    ice_count: int = 10
    timeout: float = 60.0
    out: str = "out"
    seed: int = 7
    jobs: int = 1
    resolution: float = 1.0

    @classmethod
    def from_sources(cls, config_path, overrides):
        values = {}
        path = config_path or os.environ.get("GEOPROG_CONFIG")
        if path:
            try:
                with open(path, "rb") as f:
                    doc = tomllib.load(f)
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise click.ClickException(f"config file {path}: {exc}")
            known = {f.name for f in fields(cls)}
            for key, val in doc.items():
                if key not in known:
                    raise click.ClickException(f"config file {path}: unknown key {key!r}")
                values[key] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**values)
        if cfg.ice_count < 0:
            raise click.ClickException("ice-count must be >= 0")
        for attr in ("scene", "registry", "ice", "programs"):
            p = getattr(cfg, attr)
            if p is not None and not os.path.exists(p):
                raise click.ClickException(f"{attr} path does not exist: {p}")
        if cfg.transform not in (None, "embedded") and not os.path.exists(cfg.transform):
            raise click.ClickException(f"transform path does not exist: {cfg.transform}")
        return cfg


_ENGINE_FLAGS = [
    click.option("--config", "config_path", type=str, default=None,
                 help="TOML config file (default: $GEOPROG_CONFIG)."),
    click.option("--scene", type=str, default=None),
    click.option("--registry", type=str, default=None),
    click.option("--transform", type=str, default=None,
                 help="'embedded' or a transform JSON file."),
    click.option("--providers", type=click.Choice(["oracle", "http"]), default=None),
    click.option("--endpoint", type=str, default=None, help="http provider base URL."),
    click.option("--programs", type=str, default=None,
                 help="oracle generator query->program JSON."),
    click.option("--tau", type=float, default=None),
    click.option("--ice", type=str, default=None, help="ICE store JSON."),
    click.option("--ice-count", "ice_count", type=int, default=None),
    click.option("--timeout", type=float, default=None),
    click.option("--out", type=str, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--jobs", type=int, default=None),
    click.option("--resolution", type=float, default=None),
]


def engine_flags(fn):
    for flag in reversed(_ENGINE_FLAGS):
        fn = flag(fn)
    return fn


def _load_transform(cfg, tree):
    if cfg.transform in (None, "embedded"):
        if tree.header.geo_transform is not None:
            return GeoTransform.from_json_dict(tree.header.geo_transform)
        return GeoTransform.identity()
    with open(cfg.transform) as f:
        return GeoTransform.from_json_dict(json.load(f))


def _build_runtime(cfg):
    """(engine, generator, ices) from a validated config."""
    if cfg.scene is None or cfg.registry is None:
        raise click.ClickException("--scene and --registry are required")
    try:
        tree = load_scene(cfg.scene)
        registry = load_registry(cfg.registry)
        transform = _load_transform(cfg, tree)
    except EngineError as exc:
        raise click.ClickException(str(exc))

    lo, hi = np.asarray(tree.header.bounds)[:, :2]
    n_w = max(1, int(round((hi[0] - lo[0]) / cfg.resolution)))
    n_h = max(1, int(round((hi[1] - lo[1]) / cfg.resolution)))
    view = TopDownView(origin_xy=(float(lo[0]), float(lo[1])),
                       width_px=n_w, height_px=n_h, resolution=cfg.resolution)

    if cfg.providers == "http":
        if not cfg.endpoint:
            raise click.ClickException("--endpoint is required with --providers http")
        ep = ProviderEndpoint(base_url=cfg.endpoint)
        embedder = HttpEmbedder(ep)
        detector = HttpDetector(ep)
        generator = HttpGenerator(ep)
    else:
        from .synth import CLASS_COLORS
        embedder = OracleEmbedder(sorted(CLASS_COLORS), dim=tree.latent_dim)
        detector = OracleDetector(CLASS_COLORS)
        program_map = {}
        if cfg.programs:
            with open(cfg.programs) as f:
                program_map = json.load(f)
        generator = OracleGenerator(programs=program_map)

    engine = GeoEngine(tree, registry, transform, view,
                       embedder=embedder, detector=detector, tau=cfg.tau)
    if cfg.ice:
        try:
            ices = ICEStore.load(cfg.ice)
        except (OSError, ValueError, KeyError) as exc:
            raise click.ClickException(f"ICE store {cfg.ice}: {exc}")
    else:
        from .suite import default_ice_store
        ices = default_ice_store()
    return engine, generator, ices


@click.group()
def main():
    """Geographic program engine over Gaussian city scenes."""


@main.command()
@engine_flags
@click.argument("text")
def query(config_path, text, **overrides):
    """Answer one natural-language query; prints the result."""
    cfg = EngineConfig.from_sources(config_path, overrides)
    engine, generator, ices = _build_runtime(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    try:
        ast = generate_program(text, generator, ices, cfg.ice_count)
    except EngineError as exc:
        raise click.ClickException(f"program generation failed: {exc}")
    with open(os.path.join(cfg.out, "program.txt"), "w") as f:
        f.write(ast.source_text)
    value, trace = execute_program(ast, engine, timeout_s=cfg.timeout,
                                   trace_dir=cfg.out)
    with open(os.path.join(cfg.out, "trace.json"), "w") as f:
        json.dump(trace.to_json_dict(), f, indent=2)
    if isinstance(value, Segment):
        save_mask_png(value, os.path.join(cfg.out, "answer.png"))
        click.echo(f"Segment({value.pixel_count} px) -> "
                   f"{os.path.join(cfg.out, 'answer.png')}")
    elif value is None:
        click.echo("None")
    else:
        click.echo(str(value))


@main.command("eval")
@engine_flags
@click.option("--ice-sweep", is_flag=True,
              help="Run with 5, 10, and 15 in-context examples.")
@click.option("--none-policy", type=click.Choice(["skip", "penalty"]),
              default="skip")
@click.argument("dataset")
def eval_cmd(config_path, dataset, ice_sweep, none_policy, **overrides):
    """Score a JSON-lines benchmark; writes JSON + CSV reports."""
    cfg = EngineConfig.from_sources(config_path, overrides)
    engine, generator, ices = _build_runtime(cfg)
    try:
        records = load_dataset(dataset)
    except EngineError as exc:
        raise click.ClickException(f"dataset: {exc}")
    os.makedirs(cfg.out, exist_ok=True)
    counts = (5, 10, 15) if ice_sweep else (cfg.ice_count,)
    for n_ice in counts:
        report = run_benchmark(records, engine, generator, ices, n_ice=n_ice,
                               timeout_s=cfg.timeout, jobs=cfg.jobs,
                               none_policy=none_policy)
        stem = os.path.join(cfg.out, f"report_ice{n_ice}")
        report.save(stem + ".json", stem + ".csv")
        click.echo(f"n_ice={n_ice}: wrote {stem}.json")
        for task, stats in sorted(report.per_task.items()):
            click.echo(f"  {task}: {json.dumps(stats, sort_keys=True)}")


@main.command()
@click.option("--seed", type=int, default=7)
@click.option("--out", type=str, default="out")
@click.option("--resolution", type=float, default=1.0)
def synth(seed, out, resolution):
    """Generate a synthetic city: scene, registry, dataset, program map."""
    from .harness import save_dataset
    from .suite import build_city_bundle, build_query_suite

    os.makedirs(out, exist_ok=True)
    try:
        bundle = build_city_bundle(seed=seed, resolution=resolution)
        suite = build_query_suite(bundle)
    except EngineError as exc:
        raise click.ClickException(str(exc))
    scene_path = os.path.join(out, "scene.gclf")
    save_scene(bundle.tree, scene_path)
    bundle.registry.save(os.path.join(out, "registry.geojson"))
    save_dataset(suite.records, os.path.join(out, "dataset.jsonl"))
    with open(os.path.join(out, "programs.json"), "w") as f:
        json.dump(suite.programs, f, indent=2, sort_keys=True)
    suite.ice_store.save(os.path.join(out, "ices.json"))
    click.echo(f"seed {seed}: {len(bundle.tree)} nodes, "
               f"{len(suite.records)} queries -> {out}")


@main.command()
@click.argument("src")
@click.argument("dst")
def ingest(src, dst):
    """Validate a scene container and rewrite it canonically."""
    try:
        tree = load_scene(src)
        save_scene(tree, dst)
    except EngineError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{len(tree)} nodes -> {dst}")


@main.command()
@click.argument("scene_path")
@click.option("--points", required=True, help="control points JSON.")
@click.option("--kind", type=click.Choice(["similarity", "affine"]),
              default="similarity")
@click.option("--out", type=str, default=None,
              help="rewrite the container with the transform embedded.")
def georef(scene_path, points, kind, out):
    """Fit a scene-to-world transform from control points."""
    from dataclasses import replace
    try:
        cps = ControlPointSet.from_file(points)
        transform = estimate_transform(cps, kind=kind)
    except (EngineError, OSError, KeyError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"{kind} fit over {len(cps)} points: "
               f"rmse {transform.residual_rmse:.6g} m, scale {transform.scale:.6g}")
    if out:
        try:
            tree = load_scene(scene_path)
            tree.header = replace(tree.header,
                                  geo_transform=transform.to_json_dict())
            save_scene(tree, out)
        except EngineError as exc:
            raise click.ClickException(str(exc))
        click.echo(f"embedded transform -> {out}")


@main.command()
@click.argument("scene_path")
@click.option("--res", type=float, default=1.0)
@click.option("--out", type=str, default="out")
def render(scene_path, res, out):
    """Top-down RGB + alpha PNGs of a scene."""
    try:
        tree = load_scene(scene_path)
    except EngineError as exc:
        raise click.ClickException(str(exc))
    lo, hi = np.asarray(tree.header.bounds)[:, :2]
    view = TopDownView(origin_xy=(float(lo[0]), float(lo[1])),
                       width_px=max(1, int(round((hi[0] - lo[0]) / res))),
                       height_px=max(1, int(round((hi[1] - lo[1]) / res))),
                       resolution=res)
    try:
        product = render_topdown(tree, view)
    except EngineError as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out, exist_ok=True)
    save_render_pngs(product, os.path.join(out, "rgb.png"),
                     os.path.join(out, "alpha.png"))
    click.echo(f"{view.width_px}x{view.height_px} at {res} u/px, "
               f"cut size {len(product.cut)} -> {out}")


if __name__ == "__main__":
    sys.exit(main())
