"""
vigg | Copyright (c) The vigg developers

Command line: `vigg register | bench | features | gen-scene`.

Exit codes: 0 success, 2 registration failure, 1 bad input (unreadable or
malformed files, invalid configuration).
"""
import argparse
import json
import logging
import os
import sys
import typing as t
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .bench import (
    BENCH_MAX_CLIQUES,
    EvalThresholds,
    Suite,
    compute_metrics,
    default_spec,
    pair_errors,
    run_ablation,
)
from .config import PRESETS, PipelineConfig, resolve_config
from .exceptions import FormatError, InvalidSpec, VigError
from .features import DescriptorParams, FeatureSet, describe
from .formats import (
    PairEntry,
    RunManifest,
    dump_json,
    read_depth,
    read_features,
    read_intrinsics,
    read_matches,
    read_ply,
    read_truth,
    write_features,
    write_ply,
)
from .geometry import CorrespondenceSet, PointCloud, RigidTransform, voxel_downsample
from .lift import DepthLifter, LiftSource, ProjectionLifter, build_projection_map, lift_matches
from .pipeline import RegistrationResult, register
from .report import write_report
from .synth import AmbiguityCluster, SceneSpec, generate_scene, write_bundle
from .utils import logger


EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILED = 2

LOG_ENV = "VIGG_LOG"
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def configure_logging(verbose: int = 0) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        name = os.environ.get(LOG_ENV, "WARNING").strip().upper()
        level = logging.getLevelName(name)
        if not isinstance(level, int):
            level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, format=LOG_FORMAT)
    logger.setLevel(level)


def _emit(text: str, path: "str | Path | None") -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# Argument parsing


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("registration")
    group.add_argument("--config", type=Path, help="JSON file of configuration values")
    group.add_argument("--preset", choices=sorted(PRESETS))
    group.add_argument("--gamma-sq", type=float, dest="gamma_sq")
    group.add_argument("--iterations", type=int)
    group.add_argument("--seed", type=int)
    group.add_argument("--max-source-points", type=int, dest="max_source_points")
    group.add_argument("--max-cliques", type=int, dest="max_cliques")
    group.add_argument("--t-inlier", type=float, dest="t_inlier")
    group.add_argument("--voxel-size", type=float, dest="voxel_size")
    group.add_argument("--zone-radius", type=float, dest="zone_radius")
    group.add_argument(
        "--no-guidance", action="store_false", dest="guidance", default=None,
        help="score clique hypotheses on the visual matches only",
    )


def _descriptor_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--normal-radius", type=float, dest="normal_radius")
    parser.add_argument("--feature-radius", type=float, dest="feature_radius")
    parser.add_argument("--bins", type=int, default=11, help="bins per angular feature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vigg", description="Visual and geometric point cloud registration."
    )
    parser.add_argument("--version", action="version", version=f"vigg {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register one pair, a scene bundle or a manifest")
    reg.add_argument("bundle", nargs="?", type=Path, help="scene bundle directory")
    reg.add_argument("--manifest", type=Path)
    for name in ("cloud-p", "cloud-q", "matches", "features-p", "features-q",
                 "intrinsics", "intrinsics-q", "depth-p", "depth-q", "truth"):
        reg.add_argument(f"--{name}", type=Path, dest=name.replace("-", "_"))
    reg.add_argument("--report", type=Path, help="output path (default: stdout)")
    reg.add_argument("--timings", action="store_true", help="include per-stage timings")
    reg.add_argument("--workers", type=int)
    _config_flags(reg)
    _descriptor_flags(reg)
    reg.set_defaults(func=cmd_register)

    bench = sub.add_parser("bench", help="run an ablation suite or evaluate a manifest")
    bench.add_argument("--suite", choices=[s.value for s in Suite], default=Suite.ITERATIONS.value)
    bench.add_argument("--seeds", type=int, default=20)
    bench.add_argument("--scene", type=Path, help="JSON scene spec of the base scene")
    bench.add_argument("--manifest", type=Path)
    bench.add_argument("--csv", type=Path, help="rows output (default: stdout)")
    bench.add_argument("--report", type=Path, help="summary JSON output")
    bench.add_argument("--html", type=Path, help="HTML report output")
    bench.add_argument("--workers", type=int)
    _config_flags(bench)
    _descriptor_flags(bench)
    bench.set_defaults(func=cmd_bench)

    feat = sub.add_parser("features", help="compute descriptors of a PLY cloud")
    feat.add_argument("cloud", type=Path)
    feat.add_argument("-o", "--output", type=Path, required=True)
    feat.add_argument("--voxel", type=float, help="downsample first; radii default to 2x/5x voxel")
    feat.add_argument("--cloud-out", type=Path, dest="cloud_out", help="write the described cloud")
    _descriptor_flags(feat)
    feat.set_defaults(func=cmd_features)

    gen = sub.add_parser("gen-scene", help="write a synthetic scene bundle")
    gen.add_argument("output", type=Path)
    gen.add_argument("--scene", type=Path, help="JSON scene spec")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--points", type=int, dest="point_count")
    gen.add_argument("--matches", type=int, dest="visual_match_count")
    gen.add_argument("--inlier-ratio", type=float, dest="visual_inlier_ratio")
    gen.add_argument("--noise", type=float, dest="match_noise_sigma")
    gen.add_argument("--overlap", type=float, dest="overlap_fraction")
    gen.add_argument("--cluster", type=int, help="size of an ambiguity cluster")
    gen.set_defaults(func=cmd_gen_scene)
    return parser


CONFIG_FLAGS = (
    "gamma_sq", "iterations", "seed", "max_source_points", "max_cliques",
    "t_inlier", "voxel_size", "zone_radius", "guidance",
)


def _resolve(args: argparse.Namespace, base: PipelineConfig | None = None) -> PipelineConfig:
    return resolve_config(
        config_file=args.config,
        preset=args.preset,
        overrides={name: getattr(args, name) for name in CONFIG_FLAGS},
        base=base,
    )


def _descriptor(args: argparse.Namespace, voxel: float | None = None) -> DescriptorParams | None:
    normal, feature = args.normal_radius, args.feature_radius
    if voxel is not None:
        defaults = DescriptorParams.for_voxel(voxel)
        normal = normal or defaults.normal_radius
        feature = feature or defaults.feature_radius
    if normal is None and feature is None:
        return None
    if normal is None or feature is None:
        raise VigError("--normal-radius and --feature-radius go together")
    return DescriptorParams(normal_radius=normal, feature_radius=feature, bins_per_angle=args.bins)


# Pair loading


def _features(
    path: Path | None, cloud: PointCloud, params: DescriptorParams | None, label: str
) -> FeatureSet:
    if path is not None and path.exists():
        return read_features(path)
    if params is None:
        missing = f"feature file {path}" if path is not None else f"{label}"
        raise FileNotFoundError(
            f"{missing} not found and no descriptor parameters "
            "(--normal-radius/--feature-radius) were given"
        )
    logger.info("computing %s descriptors", label)
    return describe(cloud, params)[1]


def _lift_source(
    cloud: PointCloud, intrinsics: Path | None, depth: Path | None, label: str
) -> LiftSource:
    if intrinsics is None:
        raise FormatError(f"pixel matches need camera intrinsics for {label}")
    k, extrinsic = read_intrinsics(intrinsics)
    if depth is not None:
        return DepthLifter(read_depth(depth), k, extrinsic)
    projection = build_projection_map(cloud, extrinsic or RigidTransform.identity(), k)
    return ProjectionLifter(projection, cloud)


def load_pair(
    entry: PairEntry, params: DescriptorParams | None = None
) -> tuple[PointCloud, PointCloud, FeatureSet, FeatureSet, CorrespondenceSet, RigidTransform | None]:
    p = read_ply(entry.cloud_p)
    q = read_ply(entry.cloud_q)
    fp = _features(entry.features_p, p, params, "features_p")
    fq = _features(entry.features_q, q, params, "features_q")

    matches = read_matches(entry.matches)
    if matches.lifted is not None:
        c_vis = matches.lifted
    else:
        source_p = _lift_source(p, entry.intrinsics, entry.depth_p, "cloud_p")
        source_q = _lift_source(q, entry.intrinsics_q or entry.intrinsics, entry.depth_q, "cloud_q")
        c_vis = lift_matches(matches.pixels, source_p, source_q)

    truth = read_truth(entry.truth)[0] if entry.truth is not None else None
    return p, q, fp, fq, c_vis, truth


def _pair_from_args(args: argparse.Namespace) -> PairEntry:
    base = PairEntry.from_bundle(args.bundle) if args.bundle is not None else None
    values: dict[str, t.Any] = {}
    for name in ("cloud_p", "cloud_q", "matches", "features_p", "features_q",
                 "intrinsics", "intrinsics_q", "depth_p", "depth_q", "truth"):
        explicit = getattr(args, name)
        values[name] = explicit if explicit is not None else getattr(base, name, None)
    missing = [name for name in ("cloud_p", "cloud_q", "matches") if values[name] is None]
    if missing:
        raise VigError(
            "missing " + ", ".join(f"--{name.replace('_', '-')}" for name in missing)
            + " (or a scene bundle directory)"
        )
    name = base.name if base is not None else Path(values["cloud_p"]).stem
    return PairEntry(name=name, **values)


def _pair_report(
    entry: PairEntry,
    result: RegistrationResult,
    truth: RigidTransform | None,
    *,
    timings: bool,
) -> dict[str, t.Any]:
    report = {"pair": entry.name, **result.to_dict(timings=timings)}
    if truth is not None:
        re_deg, te_m = pair_errors(result, truth)
        report["errors"] = {
            "rotation_error": re_deg,
            "translation_error": te_m if result.ok else None,
        }
    return report


def _register_entry(
    entry: PairEntry, cfg: PipelineConfig, params: DescriptorParams | None
) -> tuple[RegistrationResult, RigidTransform | None]:
    p, q, fp, fq, c_vis, truth = load_pair(entry, params)
    return register(p, q, fp, fq, c_vis, cfg), truth


def _register_manifest(
    manifest: RunManifest,
    cfg: PipelineConfig,
    params: DescriptorParams | None,
    workers: int | None,
) -> list[tuple[PairEntry, RegistrationResult, RigidTransform | None]]:
    # Loading errors abort the run before any registration output is written.
    def run(entry: PairEntry) -> tuple[PairEntry, RegistrationResult, RigidTransform | None]:
        result, truth = _register_entry(entry, cfg, params)
        logger.info("%s: %s", entry.name, result.status.value)
        return entry, result, truth

    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        return list(pool.map(run, manifest.pairs))


# Commands


def cmd_register(args: argparse.Namespace) -> int:
    params = _descriptor(args)
    if args.manifest is not None:
        manifest = RunManifest.load(args.manifest)
        cfg = _resolve(args, PipelineConfig.from_dict(manifest.config))
        runs = _register_manifest(manifest, cfg, params, args.workers)
        report: dict[str, t.Any] = {
            "config": cfg.to_dict(),
            "pairs": [_pair_report(e, r, tr, timings=args.timings) for e, r, tr in runs],
        }
        with_truth = [(r, tr) for _, r, tr in runs if tr is not None]
        if with_truth:
            thresholds = EvalThresholds.for_preset(args.preset)
            report["metrics"] = compute_metrics(with_truth, thresholds).to_dict(pairs=False)
        _emit(dump_json(report), args.report)
        return EXIT_OK if all(r.ok for _, r, _ in runs) else EXIT_FAILED

    entry = _pair_from_args(args)
    cfg = _resolve(args)
    result, truth = _register_entry(entry, cfg, params)
    _emit(dump_json(_pair_report(entry, result, truth, timings=args.timings)), args.report)
    if not result.ok:
        logger.error("%s: registration failed (%s)", entry.name, result.status.value)
        return EXIT_FAILED
    return EXIT_OK


def _load_spec(path: Path | None, fallback: SceneSpec) -> SceneSpec:
    if path is None:
        return fallback
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"[{path}:{err.lineno}] invalid JSON: {err.msg}") from err
    try:
        return SceneSpec.from_dict(data)
    except TypeError as err:
        raise InvalidSpec(f"[{path}] {err}") from err


def cmd_bench(args: argparse.Namespace) -> int:
    thresholds = EvalThresholds.for_preset(args.preset)
    if args.manifest is not None:
        return _bench_manifest(args, thresholds)

    suite = Suite(args.suite)
    spec = _load_spec(args.scene, default_spec(suite))
    if args.seed is not None:
        spec = spec.replace(seed=args.seed)
    cfg = _resolve(args, PipelineConfig(max_cliques=BENCH_MAX_CLIQUES))
    table = run_ablation(
        suite, spec, cfg, seeds=args.seeds, workers=args.workers, thresholds=thresholds
    )
    _emit(table.to_csv(), args.csv)
    if args.report is not None:
        _emit(dump_json(table.summary()), args.report)
    if args.html is not None:
        write_report(args.html, table)
    return EXIT_OK


def _bench_manifest(args: argparse.Namespace, thresholds: EvalThresholds) -> int:
    manifest = RunManifest.load(args.manifest)
    cfg = _resolve(args, PipelineConfig.from_dict(manifest.config))
    runs = _register_manifest(manifest, cfg, _descriptor(args), args.workers)
    scored = [(e, r, tr) for e, r, tr in runs if tr is not None]
    if not scored:
        raise FormatError(f"[{args.manifest}] no pair has a truth file to evaluate against")

    metrics = compute_metrics([(r, tr) for _, r, tr in scored], thresholds)
    lines = ["pair,status,rotation_error,translation_error,recalled\n"]
    for (entry, _, _), outcome in zip(scored, metrics.pairs, strict=True):
        lines.append(
            f"{entry.name},{outcome.status.value},{outcome.rotation_error:.9g},"
            f"{outcome.translation_error:.9g},{int(outcome.recalled)}\n"
        )
    _emit("".join(lines), args.csv)
    if args.report is not None:
        _emit(dump_json(metrics.to_dict()), args.report)
    return EXIT_OK


def cmd_features(args: argparse.Namespace) -> int:
    cloud = read_ply(args.cloud)
    if args.voxel is not None:
        cloud = voxel_downsample(cloud, args.voxel)
    params = _descriptor(args, args.voxel)
    if params is None:
        raise VigError("pass --voxel or both --normal-radius and --feature-radius")
    cloud, features = describe(cloud, params)
    write_features(args.output, features)
    if args.cloud_out is not None:
        write_ply(args.cloud_out, cloud)
    logger.info("wrote %d x %d features to %s", len(features), features.dim, args.output)
    return EXIT_OK


def cmd_gen_scene(args: argparse.Namespace) -> int:
    spec = _load_spec(args.scene, SceneSpec())
    changes = {
        name: getattr(args, name)
        for name in ("seed", "point_count", "visual_match_count", "visual_inlier_ratio",
                     "match_noise_sigma", "overlap_fraction")
        if getattr(args, name) is not None
    }
    if args.cluster:
        changes["ambiguity_cluster"] = AmbiguityCluster(args.cluster)
    scene = generate_scene(spec.replace(**changes))
    write_bundle(args.output, scene)
    logger.info("wrote scene bundle %s", args.output)
    return EXIT_OK


def main(argv: t.Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except (VigError, OSError) as err:
        sys.stderr.write(f"vigg {args.command}: error: {err}\n")
        return EXIT_INPUT
