"""Command-line entry point: ``aad flow|run|eval|render|synth``.

Runs are described by an INI file with sections ``[input]``, ``[flow]``,
``[detector]``, ``[objects]`` and ``[output]``; any key can be overridden
with ``--set section.key=value``. Relative paths are resolved against the
directory holding the config file.

Exit codes: 0 success, 1 input or configuration error, 2 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, label_image
from .errors import AADError, ConfigError, InputError, InvariantError
from .evaluation import format_roc_csv, load_frame_labels, roc_sweep
from .frame_io import encode_ppm, iter_sequence, read_pgm, sequence_paths, write_pgm
from .motion_stats import CHANNELS, StatsGrid, load_stats_snapshot, save_stats_snapshot
from .object_map import DEFAULT_CLASSES, DETECTION_THRESHOLD, ObjectMap, load_detections, load_object_map, save_object_map
from .optical_flow import FlowParams, frame_pairing
from .pipeline import RunArtifacts, RunResult, cached_flow, run_frames
from .synthetic import render_sequence, scene_from_config, write_sequence

log = logging.getLogger("aad")

DETECTIONS_CSV = "detections.csv"
STATS_FILE = "stats.aads"
ARTIFACTS_FILE = "artifacts.npz"
OBJECTS_FILE = "objects.npz"
RESOLVED_CONFIG = "run.ini"


@dataclass
class RunConfig:
    frames: Path
    pattern: str = "*.pgm"
    detections: Path | None = None
    truth: Path | None = None
    flow: FlowParams = field(default_factory=FlowParams)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    class_names: tuple[str, ...] = DEFAULT_CLASSES
    detection_threshold: float = DETECTION_THRESHOLD
    out_dir: Path = Path("out")
    cache: bool = True
    anomaly_maps: bool = False


# --------------------------------------------------------------------------
# Config loading
# --------------------------------------------------------------------------


def _coerce(raw: str, kind):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw.strip()


def _section_kwargs(parser, section: str, cls) -> dict:
    if not parser.has_section(section):
        return {}
    defaults = cls()
    out = {}
    for f in fields(cls):
        if f.name in parser[section]:
            out[f.name] = _coerce(parser[section][f.name], type(getattr(defaults, f.name)))
    unknown = set(parser[section]) - {f.name for f in fields(cls)} - set(parser.defaults())
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    return out


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not section or not name:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][name] = value


def load_run_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    apply_overrides(parser, overrides)
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        inp = parser["input"] if parser.has_section("input") else {}
        if "frames" not in inp:
            raise ConfigError("[input] frames is required")
        flow = FlowParams(**_section_kwargs(parser, "flow", FlowParams))
        det_kwargs = _section_kwargs(parser, "detector", DetectorConfig)
        obj = parser["objects"] if parser.has_section("objects") else {}
        for key in ("use_objects", "p_rare", "min_total"):
            if key in obj:
                det_kwargs[key] = _coerce(obj[key], type(getattr(DetectorConfig(), key)))
        detector = DetectorConfig(**det_kwargs)
        names = DEFAULT_CLASSES
        if "class_names" in obj:
            names = tuple(n.strip() for n in obj["class_names"].split(",") if n.strip())
        if "num_classes" in obj and int(obj["num_classes"]) != len(names):
            raise ConfigError(f"num_classes={obj['num_classes']} but {len(names)} class names given")
        out = parser["output"] if parser.has_section("output") else {}
        cfg = RunConfig(
            frames=resolve(inp["frames"]),
            pattern=inp.get("pattern", "*.pgm"),
            detections=resolve(inp["detections"]) if inp.get("detections") else None,
            truth=resolve(inp["truth"]) if inp.get("truth") else None,
            flow=flow,
            detector=detector,
            class_names=names,
            detection_threshold=float(obj.get("threshold", DETECTION_THRESHOLD)),
            out_dir=resolve(out.get("dir", "out")),
            cache=_coerce(out.get("cache", "true"), bool),
            anomaly_maps=_coerce(out.get("anomaly_maps", "false"), bool),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, AADError):
            raise ConfigError(f"{path}: {exc}") from exc
        raise ConfigError(f"{path}: invalid value ({exc})") from exc

    if not cfg.frames.is_dir():
        raise ConfigError(f"frames directory {cfg.frames} does not exist")
    if cfg.detector.use_objects and cfg.detections is None:
        raise ConfigError("use_objects is on but [input] detections is not set")
    for p in (cfg.detections, cfg.truth):
        if p is not None and not p.is_file():
            raise ConfigError(f"input file {p} does not exist")
    return cfg


def detector_to_ini(cfg: DetectorConfig) -> str:
    parser = configparser.ConfigParser()
    parser["detector"] = {k: str(v) for k, v in asdict(cfg).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def detector_from_ini(path) -> DetectorConfig:
    parser = configparser.ConfigParser()
    parser.read(path)
    try:
        return DetectorConfig(**_section_kwargs(parser, "detector", DetectorConfig))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_flow(frames_dir, out_dir, params: FlowParams = FlowParams(), pattern="*.pgm") -> tuple[int, int]:
    """Compute and cache flow for every frame pair; returns ``(computed, reused)``."""
    computed = reused = 0
    for prev, nxt in frame_pairing(iter_sequence(frames_dir, pattern, min_frames=2), params.frame_stride):
        _, fresh = cached_flow(prev, nxt, params, out_dir)
        computed += fresh
        reused += not fresh
    return computed, reused


def write_detections_csv(path, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "score", "flag", "max_zscore"])
        for idx, score, flag, z in result.frame_table():
            writer.writerow([idx, score, int(flag), f"{z:.6f}"])


def cmd_run(cfg: RunConfig) -> RunResult:
    paths = sequence_paths(cfg.frames, cfg.pattern)
    records = None
    num_classes = len(cfg.class_names)
    if cfg.detector.use_objects:
        size = read_pgm(paths[0]).shape[::-1] if paths else None
        records = load_detections(
            cfg.detections, num_classes=num_classes, threshold=cfg.detection_threshold, frame_size=size
        )
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    result = run_frames(
        iter_sequence(cfg.frames, cfg.pattern, min_frames=cfg.flow.frame_stride + 1),
        cfg.detector,
        cfg.flow,
        records=records,
        num_classes=num_classes,
        cache_dir=out / "flow_cache" if cfg.cache else None,
        num_frames=len(paths),
    )
    for m in result.maps:
        if m.frame_score != int(np.count_nonzero(m.anomalous)):
            raise InvariantError(f"frame {m.frame_index}: score does not match anomalous cell count")

    write_detections_csv(out / DETECTIONS_CSV, result)
    save_stats_snapshot(out / STATS_FILE, result.grid)
    result.artifacts.save(out / ARTIFACTS_FILE)
    (out / RESOLVED_CONFIG).write_text(detector_to_ini(cfg.detector))
    if result.object_map is not None:
        save_object_map(out / OBJECTS_FILE, result.object_map)
    if cfg.anomaly_maps:
        maps_dir = out / "anomaly"
        maps_dir.mkdir(exist_ok=True)
        for m in result.maps:
            write_pgm(maps_dir / f"anomaly_{m.frame_index:04d}.pgm", label_image(m))
    return result


def parse_k_list(text: str) -> list[float]:
    try:
        ks = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"invalid k list {text!r}") from exc
    if not ks:
        raise InputError("k list is empty")
    return ks


def cmd_eval(run_dir, truth_path, k_values, mode="frozen", cfg: DetectorConfig | None = None) -> str:
    run_dir = Path(run_dir)
    if not Path(truth_path).is_file():
        raise InputError(f"truth file {truth_path} does not exist")
    artifacts = RunArtifacts.load(run_dir / ARTIFACTS_FILE)
    if cfg is None:
        ini = run_dir / RESOLVED_CONFIG
        cfg = detector_from_ini(ini) if ini.is_file() else DetectorConfig()
    truth = load_frame_labels(truth_path)
    points = roc_sweep(artifacts, truth, k_values, cfg, mode=mode)
    for p in points:
        if p.tp + p.fp + p.tn + p.fn > artifacts.num_frames:
            raise InvariantError(f"k={p.k}: confusion counts exceed frame count")
    text = format_roc_csv(points)
    (run_dir / "roc.csv").write_text(text)
    return text


def _normalize(plane: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(plane))) if plane.size else 0.0
    if peak == 0.0 or not np.isfinite(peak):
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.rint(np.abs(plane) / peak * 255.0).astype(np.uint8)


def motion_image(grid: StatsGrid) -> np.ndarray:
    """RGB image of mean flow per cell: vx on green, vy on blue, red unused."""
    gh, gw = grid.shape
    if gh == 0 or gw == 0:
        raise InputError("statistics snapshot is empty")
    rgb = np.zeros((gh, gw, 3), dtype=np.uint8)
    rgb[..., 1] = _normalize(grid.mean[CHANNELS.index("vx")])
    rgb[..., 2] = _normalize(grid.mean[CHANNELS.index("vy")])
    return rgb


def probability_images(omap: ObjectMap) -> dict[int, np.ndarray]:
    """Grayscale heat map for every class that was observed at least once."""
    return {
        c: _normalize(omap.probabilities(c))
        for c in range(omap.num_classes)
        if omap.counts[..., c].any()
    }


def cmd_render(stats_path, out_dir, objects_path=None, class_names=DEFAULT_CLASSES) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if stats_path is not None:
        rgb = motion_image(load_stats_snapshot(stats_path))
        path = out / "motion.ppm"
        path.write_bytes(encode_ppm(rgb))
        written.append(path)
    if objects_path is not None:
        omap = load_object_map(objects_path)
        for c, img in probability_images(omap).items():
            name = class_names[c] if c < len(class_names) else str(c)
            path = out / f"prob_{c:02d}_{name}.pgm"
            write_pgm(path, img)
            written.append(path)
    return written


def cmd_synth(spec_path, out_dir) -> Path:
    spec = scene_from_config(spec_path)
    frames, truth = render_sequence(spec)
    return write_sequence(frames, truth, out_dir)


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aad", description="Adaptive motion and object anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="compute and cache dense optical flow")
    p.add_argument("--frames", required=True, type=Path, help="directory of PGM frames")
    p.add_argument("--out", required=True, type=Path, help="cache directory")
    p.add_argument("--stride", type=int, default=FlowParams().frame_stride, help="frame distance per pair")
    p.add_argument("--pattern", default="*.pgm")

    p = sub.add_parser("run", help="run the streaming detector from a config file")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("eval", help="ROC sweep over k for a finished run")
    p.add_argument("--run", required=True, type=Path, help="output directory of `aad run`")
    p.add_argument("--truth", required=True, type=Path, help="per-frame 0/1 labels")
    p.add_argument("--k", default="1,2,3,4,5,6", help="comma-separated k values")
    p.add_argument("--mode", choices=("frozen", "live"), default="frozen")

    p = sub.add_parser("render", help="render statistics and object maps as images")
    p.add_argument("--stats", type=Path, help="statistics snapshot (.aads)")
    p.add_argument("--objects", type=Path, help="object map (.npz)")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--spec", required=True, type=Path, help="INI file with a [scene] section")
    p.add_argument("--out", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "flow":
            computed, reused = cmd_flow(args.frames, args.out, FlowParams(frame_stride=args.stride), args.pattern)
            print(f"computed {computed} flow fields, reused {reused} from cache")
        elif args.command == "run":
            result = cmd_run(load_run_config(args.config, args.overrides))
            flagged = sum(m.frame_flag for m in result.maps)
            print(f"processed {len(result.maps)} frame pairs, {flagged} flagged")
        elif args.command == "eval":
            sys.stdout.write(cmd_eval(args.run, args.truth, parse_k_list(args.k), args.mode))
        elif args.command == "render":
            if args.stats is None and args.objects is None:
                raise InputError("render needs --stats and/or --objects")
            for path in cmd_render(args.stats, args.out, args.objects):
                print(path)
        elif args.command == "synth":
            print(cmd_synth(args.spec, args.out))
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except (AADError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
