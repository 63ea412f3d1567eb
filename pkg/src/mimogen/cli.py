"""Command-line pipeline: scene -> trace -> build -> beams, plus validate.

Exit codes: 0 success, 1 validation/pipeline failure, 2 usage error.
All diagnostics and progress go to stderr; declared output files are
written atomically (temp file + rename), so an interrupted run never
leaves a partial output under its final name.

The default output directory can be set with the MIMOGEN_OUT_DIR
environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

from . import __version__
from .beams import BeamEvalConfig, build_ml_dataset, dft_codebook
from .dataset import (
    DatasetError,
    build_dataset,
    export_dataset,
    load_dataset,
    parse_shard,
)
from .kvconfig import ConfigError, KVEntry, parse_kv
from .params import ParamSet, ParamError, parse_params, serialize_params
from .rayio import (
    RayFileError,
    RayFileHeader,
    read_rayfile,
    validate_rayfile,
    write_rayfile,
)
from .scene import (
    Scene,
    SceneConfigError,
    build_o1_scene,
    scene_from_json,
    scene_to_json,
    user_positions,
    users_in_row_range,
)
from .tracer import trace_paths_batch

_TRACE_CHUNK = 128


class ProgressReporter:
    """Machine-readable progress lines ``STAGE done/total`` on stderr,
    rate-limited to one line per whole-percent increment plus a final line."""

    def __init__(self, stage: str, total: int, stream: TextIO | None = None,
                 quiet: bool = False):
        self.stage = stage
        self.total = total
        self.stream = stream if stream is not None else sys.stderr
        self.quiet = quiet
        self._last_pct = -1
        self._final_emitted = False

    def update(self, done: int, total: int | None = None) -> None:
        if total is not None:
            self.total = total
        if done > self.total:
            done = self.total
        if self.quiet:
            return
        pct = 100 if self.total == 0 else int(100 * done / self.total)
        if done == self.total:
            if not self._final_emitted:
                self.stream.write(f"{self.stage} {done}/{self.total}\n")
                self._final_emitted = True
            return
        if pct > self._last_pct:
            self._last_pct = pct
            self.stream.write(f"{self.stage} {done}/{self.total}\n")


def progress_report(stage: str, done: int, total: int,
                    reporter: ProgressReporter | None = None) -> ProgressReporter:
    """Functional wrapper over ProgressReporter for one-off updates."""
    if reporter is None:
        reporter = ProgressReporter(stage, total)
    reporter.update(done, total)
    return reporter


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    input_hashes: dict[str, str]
    outputs: list[str]
    wall_seconds: float
    tool_version: str = ""

    def write(self, path: Path) -> None:
        doc = {
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "input_hashes": self.input_hashes,
            "outputs": self.outputs,
            "wall_seconds": self.wall_seconds,
            "tool_version": self.tool_version or __version__,
        }
        _atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp~")
    tmp.write_text(text)
    tmp.replace(path)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp~")
    tmp.write_bytes(data)
    tmp.replace(path)


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _file_hash(path: Path) -> str:
    return _sha(path.read_bytes())


def _default_outdir() -> str:
    return os.environ.get("MIMOGEN_OUT_DIR", ".")


def _load_scene(path: str) -> Scene:
    return scene_from_json(Path(path).read_text())


def _collect_overrides(config: str | None, sets: Sequence[str]) -> dict[str, KVEntry]:
    entries: dict[str, KVEntry] = {}
    if config:
        entries.update(parse_kv(Path(config).read_text()))
    for i, item in enumerate(sets or (), start=1):
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, _, value = item.partition("=")
        entries[key.strip()] = KVEntry(key.strip(), value.strip(), -i)
    return entries


_PARAM_FLAGS = [
    "active_BS", "active_user_first", "active_user_last",
    "num_ant_x", "num_ant_y", "num_ant_z", "ant_spacing", "bandwidth",
    "num_OFDM", "OFDM_sampling_factor", "OFDM_limit", "num_paths",
]


def _params_from_args(args: argparse.Namespace) -> ParamSet:
    text = ""
    if getattr(args, "config", None):
        text += Path(args.config).read_text() + "\n"
    for item in getattr(args, "set", None) or ():
        text += item + "\n"
    for flag in _PARAM_FLAGS:
        val = getattr(args, flag, None)
        if val is not None:
            text += f"{flag}={val}\n"
    # Later lines win: rebuild keeping the last occurrence of each key.
    latest: dict[str, str] = {}
    for line in text.splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped and "=" in stripped:
            latest[stripped.partition("=")[0].strip()] = stripped
    return parse_params("\n".join(latest.values()))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_scene(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    if args.preset != "o1":
        print(f"error: unknown preset {args.preset!r}", file=sys.stderr)
        return 2
    overrides = _collect_overrides(args.config, args.set)
    scene = build_o1_scene(overrides)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    text = scene_to_json(scene)
    _atomic_write_text(out, text)
    inputs = {args.config: _file_hash(Path(args.config))} if args.config else {}
    RunManifest(
        subcommand="scene",
        config_hash=_sha("\n".join(sorted(f"{k}={e.value}" for k, e in overrides.items()))
                         .encode()),
        input_hashes=inputs,
        outputs=[str(out)],
        wall_seconds=time.monotonic() - t0,
    ).write(out.with_name(out.name + ".manifest.json"))
    if not args.quiet:
        print(
            f"scene: {len(scene.base_stations)} base stations, "
            f"{scene.total_rows} rows, {scene.total_users} users -> {out}",
            file=sys.stderr,
        )
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    scene = _load_scene(args.scene)
    bs_ids = [int(s) for s in args.bs.split(",") if s]
    for bs_id in bs_ids:
        scene.bs_by_id(bs_id)  # fail early on unknown ids
    indices = users_in_row_range(scene, args.active_user_first, args.active_user_last)
    positions = user_positions(scene, indices)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    total = len(bs_ids) * indices.size
    reporter = ProgressReporter("TRACE", total, quiet=args.quiet)
    done = 0
    outputs = []
    for bs_id in bs_ids:
        path_lists = []
        for lo in range(0, indices.size, _TRACE_CHUNK):
            chunk = trace_paths_batch(
                scene, bs_id, positions[lo: lo + _TRACE_CHUNK],
                user_indices=indices[lo: lo + _TRACE_CHUNK].tolist(),
                max_reflections=args.max_reflections, max_paths=args.max_paths,
            )
            path_lists.extend(chunk)
            done += len(chunk)
            reporter.update(done)
        header = RayFileHeader(bs_id=bs_id, carrier_freq=scene.carrier_freq,
                               user_count=len(path_lists), scenario=scene.name)
        out = outdir / f"rays_bs{bs_id:03d}.drf"
        buf = io.BytesIO()
        write_rayfile(path_lists, header, buf)
        _atomic_write_bytes(out, buf.getvalue())
        outputs.append(str(out))
    RunManifest(
        subcommand="trace",
        config_hash=_sha(
            f"{args.bs} {args.active_user_first} {args.active_user_last} "
            f"{args.max_reflections} {args.max_paths}".encode()
        ),
        input_hashes={args.scene: _file_hash(Path(args.scene))},
        outputs=outputs,
        wall_seconds=time.monotonic() - t0,
    ).write(outdir / "trace.manifest.json")
    return 0


def _cmd_build(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    scene = _load_scene(args.scene)
    params = _params_from_args(args)
    rays_dir = Path(args.rays_dir)
    sources = {}
    for bs_id in params.active_bs:
        path = rays_dir / f"rays_bs{bs_id:03d}.drf"
        if not path.exists():
            print(f"error: missing ray file for active base station {bs_id}: {path}",
                  file=sys.stderr)
            return 1
        with path.open("rb") as fh:
            sources[bs_id] = read_rayfile(fh)
    reporter = ProgressReporter("BUILD", 1, quiet=args.quiet)
    ds = build_dataset(sources, params, scene, progress=reporter.update)
    outdir = Path(args.out_dir)
    manifest = export_dataset(ds, outdir, fmt=args.format)
    RunManifest(
        subcommand="build",
        config_hash=_sha(serialize_params(params).encode()),
        input_hashes={
            str(rays_dir / f"rays_bs{b:03d}.drf"):
                _file_hash(rays_dir / f"rays_bs{b:03d}.drf")
            for b in params.active_bs
        },
        outputs=[str(outdir / e.filename) for e in manifest.entries],
        wall_seconds=time.monotonic() - t0,
    ).write(outdir / "build.manifest.json")
    return 0


def _cmd_beams(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    ds = load_dataset(args.dataset_dir)
    codebook = dft_codebook(ds.params.dims, oversampling=args.oversampling)
    cfg = BeamEvalConfig(codebook=codebook, snr=args.snr, conjugate=args.conjugate)
    outdir = Path(args.out_dir)
    build_ml_dataset(ds, cfg, outdir)
    RunManifest(
        subcommand="beams",
        config_hash=_sha(f"{args.snr} {args.oversampling} {args.conjugate}".encode()),
        input_hashes={args.dataset_dir: _file_hash(Path(args.dataset_dir) / "manifest.txt")},
        outputs=[str(outdir / "features.csv"), str(outdir / "labels.csv")],
        wall_seconds=time.monotonic() - t0,
    ).write(outdir / "beams.manifest.json")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.path)
    problems: list[str] = []
    try:
        if path.is_dir():
            load_dataset(path)
        else:
            head = path.open("rb").read(4)
            if head == b"DMRF":
                with path.open("rb") as fh:
                    rf = read_rayfile(fh)
                problems.extend(str(v) for v in validate_rayfile(rf))
            elif head == b"DMDS":
                parse_shard(path.read_bytes())
            else:
                scene_from_json(path.read_text())
    except (RayFileError, DatasetError, SceneConfigError, ConfigError, ParamError,
            OSError, UnicodeDecodeError) as exc:
        problems.append(f"{type(exc).__name__}: {exc}")
    for p in problems:
        print(f"violation: {p}", file=sys.stderr)
    if problems:
        return 1
    if not args.quiet:
        print(f"{path}: valid", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mimogen",
        description="Geometric mmWave massive-MIMO channel dataset generator.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_scene = sub.add_parser("scene", help="build a scenario file")
    p_scene.add_argument("--preset", default="o1")
    p_scene.add_argument("--config", help="key=value scene config file")
    p_scene.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_scene.add_argument("--out", required=True)
    p_scene.add_argument("--quiet", action="store_true")
    p_scene.set_defaults(func=_cmd_scene)

    p_trace = sub.add_parser("trace", help="trace rays for selected base stations")
    p_trace.add_argument("--scene", required=True)
    p_trace.add_argument("--bs", required=True, help="comma-separated base station ids")
    p_trace.add_argument("--active_user_first", type=int, required=True)
    p_trace.add_argument("--active_user_last", type=int, required=True)
    p_trace.add_argument("--max-reflections", type=int, default=4)
    p_trace.add_argument("--max-paths", type=int, default=25)
    p_trace.add_argument("--out-dir", default=_default_outdir())
    p_trace.add_argument("--workers", type=int, default=os.cpu_count())
    p_trace.add_argument("--quiet", action="store_true")
    p_trace.set_defaults(func=_cmd_trace)

    p_build = sub.add_parser("build", help="build channel dataset from ray files")
    p_build.add_argument("--scene", required=True)
    p_build.add_argument("--rays-dir", required=True)
    p_build.add_argument("--config", help="key=value parameter file")
    p_build.add_argument("--set", action="append", metavar="KEY=VALUE")
    for flag in _PARAM_FLAGS:
        p_build.add_argument(f"--{flag}")
    p_build.add_argument("--format", choices=("binary", "csv"), default="binary")
    p_build.add_argument("--out-dir", default=_default_outdir())
    p_build.add_argument("--workers", type=int, default=os.cpu_count())
    p_build.add_argument("--quiet", action="store_true")
    p_build.set_defaults(func=_cmd_build)

    p_beams = sub.add_parser("beams", help="export beam-prediction features/labels")
    p_beams.add_argument("--dataset-dir", required=True)
    p_beams.add_argument("--snr", type=float, default=1.0, help="linear SNR")
    p_beams.add_argument("--oversampling", type=int, default=1)
    p_beams.add_argument("--conjugate", action="store_true",
                         help="use conjugate beamforming product")
    p_beams.add_argument("--out-dir", default=_default_outdir())
    p_beams.add_argument("--quiet", action="store_true")
    p_beams.set_defaults(func=_cmd_beams)

    p_val = sub.add_parser("validate", help="validate any pipeline artifact")
    p_val.add_argument("path")
    p_val.add_argument("--quiet", action="store_true")
    p_val.set_defaults(func=_cmd_validate)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, ParamError, SceneConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RayFileError, DatasetError, KeyError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
