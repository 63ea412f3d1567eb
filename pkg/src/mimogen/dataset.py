"""Dataset assembly, indexing, and on-disk container.

A dataset holds, for every active base station and active user, the M x |K|
channel matrix and the user location. Access is by 1-based ordinals: the
b-th active base station and the u-th active user.

On disk the dataset is a directory of per-base-station shards plus a text
manifest. Shard layout (little-endian): magic ``DMDS``, version u32, echo
block (u32 byte length + UTF-8 key=value text carrying the parameter set,
``bs_id``, ``user_count``, and ``scenario``), then per user: global_index
u64, location 3 x f64, channel M * |K| * 2 x f64 (complex interleaved
re/im, column-major). The manifest has one line per shard:
``filename bs_id first_user last_user bytes hash`` where the hash is the
first 16 hex digits of the shard's SHA-256.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .channel import ChannelMatrix, channel_matrices_batch
from .kvconfig import ConfigError
from .params import ParamSet, parse_params, serialize_params, subcarrier_set
from .rayio import RayFile
from .scene import Scene, user_positions, users_in_row_range
from .tracer import PathList

log = logging.getLogger(__name__)

SHARD_MAGIC = b"DMDS"
SHARD_VERSION = 1
CSV_SIZE_CAP_BYTES = 64 * 1024 * 1024  # refuse CSV export above this estimate

_BATCH = 256  # users per vectorized channel-construction batch


class DatasetError(Exception):
    pass


class MissingRaySourceError(DatasetError):
    def __init__(self, bs_id: int):
        super().__init__(f"no ray source provided for active base station {bs_id}")
        self.bs_id = bs_id


class ScenarioMismatchError(DatasetError):
    pass


@dataclass(frozen=True)
class UserEntry:
    global_index: int
    location: tuple[float, float, float]
    channel: ChannelMatrix


@dataclass(frozen=True)
class Dataset:
    params: ParamSet
    scenario_name: str
    bs_ids: tuple[int, ...]                      # active order
    per_bs: tuple[tuple[UserEntry, ...], ...]    # one user tuple per active BS

    @property
    def n_users(self) -> int:
        return len(self.per_bs[0]) if self.per_bs else 0

    def bs_for_ordinal(self, b_ord: int) -> int:
        """Map the 1-based active-BS ordinal to the base station id."""
        if not 1 <= b_ord <= len(self.bs_ids):
            raise IndexError(
                f"active-BS ordinal {b_ord} out of range 1..{len(self.bs_ids)}"
            )
        return self.bs_ids[b_ord - 1]

    def user_for_ordinal(self, u_ord: int) -> int:
        """Map the 1-based active-user ordinal to the global user index."""
        if not 1 <= u_ord <= self.n_users:
            raise IndexError(
                f"active-user ordinal {u_ord} out of range 1..{self.n_users}"
            )
        return self.per_bs[0][u_ord - 1].global_index


def get_channel(ds: Dataset, b_ord: int, u_ord: int) -> ChannelMatrix:
    """Channel matrix of the b-th active BS and u-th active user (1-based)."""
    ds.bs_for_ordinal(b_ord)
    ds.user_for_ordinal(u_ord)
    return ds.per_bs[b_ord - 1][u_ord - 1].channel


def get_location(ds: Dataset, b_ord: int, u_ord: int) -> tuple[float, float, float]:
    ds.bs_for_ordinal(b_ord)
    ds.user_for_ordinal(u_ord)
    return ds.per_bs[b_ord - 1][u_ord - 1].location


def active_user_indices(scene: Scene, params: ParamSet) -> np.ndarray:
    return users_in_row_range(scene, params.active_user_first, params.active_user_last)


def build_dataset(
    ray_sources: Mapping[int, RayFile],
    params: ParamSet,
    scene: Scene,
    progress: Callable[[int, int], None] | None = None,
) -> Dataset:
    """Assemble the dataset from one ray file per active base station.

    A (bs, user) pair absent from its ray file yields an all-zero channel
    with a logged gap. Missing ray files and scenario mismatches are errors.
    """
    for bs_id in params.active_bs:
        if bs_id not in ray_sources:
            raise MissingRaySourceError(bs_id)
    scenarios = {ray_sources[b].header.scenario for b in params.active_bs}
    if len(scenarios) > 1:
        raise ScenarioMismatchError(
            f"ray files disagree on scenario name: {sorted(scenarios)}"
        )
    scenario = next(iter(scenarios))

    indices = active_user_indices(scene, params)
    positions = user_positions(scene, indices)
    per_bs: list[tuple[UserEntry, ...]] = []
    total = len(params.active_bs) * indices.size
    done = 0
    for bs_id in params.active_bs:
        rf = ray_sources[bs_id]
        by_index = {pl.user_index: pl for pl in rf.records}
        entries: list[UserEntry] = []
        for lo in range(0, indices.size, _BATCH):
            chunk_idx = indices[lo: lo + _BATCH]
            chunk_pls: list[PathList] = []
            for i, gidx in enumerate(chunk_idx):
                pl = by_index.get(int(gidx))
                if pl is None:
                    log.warning("no ray record for bs %d user %d; zero channel", bs_id, gidx)
                    pl = PathList(bs_id=bs_id, user_index=int(gidx),
                                  user_position=tuple(positions[lo + i]), paths=())
                chunk_pls.append(pl)
            mats = channel_matrices_batch(chunk_pls, params)
            for i, pl in enumerate(chunk_pls):
                entries.append(
                    UserEntry(
                        global_index=pl.user_index,
                        location=pl.user_position,
                        channel=ChannelMatrix(entries=mats[i], bs_id=bs_id,
                                              user_index=pl.user_index),
                    )
                )
            done += len(chunk_pls)
            if progress is not None:
                progress(done, total)
        per_bs.append(tuple(entries))
    return Dataset(params=params, scenario_name=scenario,
                   bs_ids=tuple(params.active_bs), per_bs=tuple(per_bs))


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    bs_id: int
    first_user: int
    last_user: int
    byte_size: int
    content_hash: str


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def to_text(self) -> str:
        lines = ["# mimogen dataset manifest v1"]
        for e in self.entries:
            lines.append(
                f"{e.filename} {e.bs_id} {e.first_user} {e.last_user} "
                f"{e.byte_size} {e.content_hash}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, bs_id, first, last, size, digest = line.split()
            entries.append(ManifestEntry(name, int(bs_id), int(first), int(last),
                                         int(size), digest))
        return cls(tuple(entries))


def content_hash(data: bytes) -> str:
    """64-bit content hash: first 16 hex digits of SHA-256."""
    return hashlib.sha256(data).hexdigest()[:16]


def shard_bytes(
    params: ParamSet,
    scenario: str,
    bs_id: int,
    entries: Sequence[UserEntry],
) -> bytes:
    echo = (
        serialize_params(params)
        + f"bs_id={bs_id}\nuser_count={len(entries)}\nscenario={scenario}\n"
    ).encode("utf-8")
    parts = [SHARD_MAGIC, struct.pack("<I", SHARD_VERSION),
             struct.pack("<I", len(echo)), echo]
    for e in entries:
        parts.append(struct.pack("<Q3d", e.global_index, *e.location))
        col_major = np.asarray(e.channel.entries, dtype="<c16").ravel(order="F")
        parts.append(col_major.tobytes())
    return b"".join(parts)


def shard_size_bytes(params: ParamSet, n_users: int, scenario: str, bs_id: int) -> int:
    """Exact on-disk size of a shard, from the documented layout."""
    echo = (
        serialize_params(params)
        + f"bs_id={bs_id}\nuser_count={n_users}\nscenario={scenario}\n"
    ).encode("utf-8")
    per_user = 8 + 3 * 8 + params.num_antennas * params.ofdm_limit * 16
    return 4 + 4 + 4 + len(echo) + n_users * per_user


def parse_shard(data: bytes) -> tuple[ParamSet, str, int, list[UserEntry]]:
    if len(data) < 12:
        raise DatasetError(f"truncated shard: {len(data)} bytes")
    if data[:4] != SHARD_MAGIC:
        raise DatasetError(f"bad shard magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != SHARD_VERSION:
        raise DatasetError(f"unsupported shard version {version}")
    (echo_len,) = struct.unpack_from("<I", data, 8)
    if 12 + echo_len > len(data):
        raise DatasetError(f"echo block overruns file: {echo_len} bytes claimed")
    try:
        echo = data[12: 12 + echo_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetError(f"echo block is not valid UTF-8: {exc}") from None
    extra = {}
    plines = []
    for line in echo.splitlines():
        key = line.split("=", 1)[0]
        if key in ("bs_id", "user_count", "scenario"):
            extra[key] = line.split("=", 1)[1] if "=" in line else ""
        else:
            plines.append(line)
    try:
        params = parse_params("\n".join(plines))
        bs_id = int(extra["bs_id"])
        user_count = int(extra["user_count"])
        scenario = extra["scenario"]
    except (ConfigError, KeyError, ValueError) as exc:
        raise DatasetError(f"bad shard echo block: {exc}") from None
    if user_count < 0:
        raise DatasetError(f"negative user_count {user_count}")

    m = params.num_antennas
    ksz = params.ofdm_limit
    per_user = 32 + m * ksz * 16
    if 12 + echo_len + user_count * per_user != len(data):
        raise DatasetError(
            f"shard length {len(data)} does not match {user_count} user "
            f"records of {per_user} bytes"
        )
    offset = 12 + echo_len
    entries: list[UserEntry] = []
    for _ in range(user_count):
        gidx, px, py, pz = struct.unpack_from("<Q3d", data, offset)
        offset += 32
        count = m * ksz
        mat = np.frombuffer(data, dtype="<c16", count=count, offset=offset)
        offset += count * 16
        entries.append(
            UserEntry(
                global_index=gidx, location=(px, py, pz),
                channel=ChannelMatrix(
                    entries=mat.reshape((m, ksz), order="F").copy(),
                    bs_id=bs_id, user_index=gidx,
                ),
            )
        )
    if offset != len(data):
        raise DatasetError(f"{len(data) - offset} trailing bytes in shard")
    return params, scenario, bs_id, entries


def export_dataset(ds: Dataset, sink: Path | str, fmt: str = "binary") -> Manifest:
    """Write per-BS shards plus a manifest; returns the manifest.

    ``fmt="csv"`` writes a readable tree instead and is refused above a
    documented size cap (CSV_SIZE_CAP_BYTES).
    """
    sink = Path(sink)
    sink.mkdir(parents=True, exist_ok=True)
    if fmt == "binary":
        entries = []
        for bs_id, users in zip(ds.bs_ids, ds.per_bs):
            name = f"shard_bs{bs_id:03d}.dmds"
            data = shard_bytes(ds.params, ds.scenario_name, bs_id, users)
            _atomic_write_bytes(sink / name, data)
            first = users[0].global_index if users else 0
            last = users[-1].global_index if users else 0
            entries.append(ManifestEntry(name, bs_id, first, last, len(data),
                                         content_hash(data)))
        manifest = Manifest(tuple(entries))
        _atomic_write_bytes(sink / "manifest.txt", manifest.to_text().encode())
        return manifest
    if fmt == "csv":
        est = sum(
            shard_size_bytes(ds.params, len(users), ds.scenario_name, bs_id) * 3
            for bs_id, users in zip(ds.bs_ids, ds.per_bs)
        )
        if est > CSV_SIZE_CAP_BYTES:
            raise DatasetError(
                f"csv export refused: estimated {est} bytes exceeds cap "
                f"{CSV_SIZE_CAP_BYTES}"
            )
        entries = []
        for bs_id, users in zip(ds.bs_ids, ds.per_bs):
            name = f"bs{bs_id:03d}_channels.csv"
            lines = ["user_index,px,py,pz,k,m,re,im"]
            ks = subcarrier_set(ds.params)
            for e in users:
                mat = e.channel.entries
                for j, k in enumerate(ks):
                    for mi in range(mat.shape[0]):
                        c = mat[mi, j]
                        lines.append(
                            f"{e.global_index},{e.location[0]!r},{e.location[1]!r},"
                            f"{e.location[2]!r},{int(k)},{mi},{c.real!r},{c.imag!r}"
                        )
            data = ("\n".join(lines) + "\n").encode()
            _atomic_write_bytes(sink / name, data)
            first = users[0].global_index if users else 0
            last = users[-1].global_index if users else 0
            entries.append(ManifestEntry(name, bs_id, first, last, len(data),
                                         content_hash(data)))
        manifest = Manifest(tuple(entries))
        _atomic_write_bytes(sink / "manifest.txt", manifest.to_text().encode())
        return manifest
    raise ValueError(f"unknown export format {fmt!r}")


def load_dataset(source: Path | str) -> Dataset:
    """Re-import a binary dataset directory written by export_dataset."""
    source = Path(source)
    manifest = Manifest.from_text((source / "manifest.txt").read_text())
    params = None
    scenario = None
    bs_ids = []
    per_bs = []
    for entry in manifest.entries:
        data = (source / entry.filename).read_bytes()
        if content_hash(data) != entry.content_hash:
            raise DatasetError(f"{entry.filename}: content hash mismatch")
        p, scen, bs_id, users = parse_shard(data)
        if params is None:
            params, scenario = p, scen
        elif p != params or scen != scenario:
            raise ScenarioMismatchError(f"{entry.filename}: inconsistent shard metadata")
        bs_ids.append(bs_id)
        per_bs.append(tuple(users))
    if params is None:
        raise DatasetError("empty manifest")
    return Dataset(params=params, scenario_name=scenario, bs_ids=tuple(bs_ids),
                   per_bs=tuple(per_bs))


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp~")
    tmp.write_bytes(data)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# Parallel channel construction
# ---------------------------------------------------------------------------

def _digest_chunk(chunk: Sequence[PathList], params: ParamSet) -> str:
    mats = channel_matrices_batch(chunk, params)
    return content_hash(np.ascontiguousarray(mats).tobytes())


def compute_channels_parallel(
    path_lists: Sequence[PathList],
    params: ParamSet,
    workers: int = 1,
    chunk_size: int = _BATCH,
    progress: Callable[[int, int], None] | None = None,
) -> str:
    """Build every channel matrix in worker processes; returns a combined
    content hash over all chunks (used for determinism and throughput checks
    without holding the full dataset in memory)."""
    chunks = [
        list(path_lists[lo: lo + chunk_size])
        for lo in range(0, len(path_lists), chunk_size)
    ]
    digests: list[str] = []
    done = 0
    if workers <= 1:
        for chunk in chunks:
            digests.append(_digest_chunk(chunk, params))
            done += len(chunk)
            if progress is not None:
                progress(done, len(path_lists))
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_digest_chunk, chunk, params) for chunk in chunks]
            for fut, chunk in zip(futures, chunks):
                digests.append(fut.result())
                done += len(chunk)
                if progress is not None:
                    progress(done, len(path_lists))
    return content_hash("".join(digests).encode())
