"""Deterministic image-method ray tracer for axis-aligned box scenes.

Computes the line-of-sight path and all specular reflection paths (off
building faces and the ground plane) up to a configurable bounce order,
using source mirroring. For each path it emits departure/arrival angles,
receive power (Friis free-space loss times per-bounce material losses),
phase, and propagation delay.

The tracer is exact: every specular solution within the bounce budget is
found (no ray-shooting density artifacts). Diffraction, diffuse scattering,
and penetration are not modeled; antennas are isotropic with unit gain.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import GROUND_MATERIAL, SPEED_OF_LIGHT, Scene

_EPS_SIDE = 1e-9      # front-side test tolerance for image pruning
_EPS_T = 1e-12        # segment-parameter tolerance for reflection points
_RECT_TOL = 1e-9      # face-rectangle containment tolerance
_SHRINK = 1e-6        # occlusion boxes are shrunk by this much per side


@dataclass(frozen=True)
class PathRecord:
    """One propagation path between a transmitter and a receiver.

    Angles are in degrees: azimuth in [-180, 180), elevation is the polar
    angle from +z in [0, 180]. Power is linear watts at unit transmit power,
    phase is radians in [0, 2*pi), delay is seconds.
    """

    aod_az: float
    aod_el: float
    aoa_az: float
    aoa_el: float
    power: float
    phase: float
    delay: float
    n_reflections: int


@dataclass(frozen=True)
class PathList:
    bs_id: int
    user_index: int
    user_position: tuple[float, float, float]
    paths: tuple[PathRecord, ...]


def mirror_point(p: Sequence[float], axis: int, offset: float) -> np.ndarray:
    """Reflect a point across the axis-aligned plane ``coord[axis] == offset``."""
    q = np.array(p, dtype=float)
    q[axis] = 2.0 * offset - q[axis]
    return q


def path_power(
    length: float,
    n_reflections: int,
    carrier_freq: float,
    reflection_loss_db: Sequence[float] = (),
) -> float:
    """Friis free-space receive power times per-bounce linear losses.

    Unit transmit power and unit antenna gains assumed.
    """
    if length <= 0:
        raise ValueError(f"path length must be > 0, got {length}")
    lam = SPEED_OF_LIGHT / carrier_freq
    p = (lam / (4.0 * math.pi * length)) ** 2
    for loss_db in reflection_loss_db:
        p *= 10.0 ** (-loss_db / 10.0)
    return p


def path_phase(delay: float, n_reflections: int, carrier_freq: float) -> float:
    """Carrier phase accumulated over the path, plus pi per specular bounce."""
    return (-2.0 * math.pi * carrier_freq * delay + math.pi * n_reflections) % (2.0 * math.pi)


# ---------------------------------------------------------------------------
# Scene geometry preprocessing
# ---------------------------------------------------------------------------

_OTHER_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass
class _Plane:
    """All coplanar faces sharing one oriented reflecting plane."""

    axis: int
    offset: float
    sign: float            # outward normal direction along `axis`
    is_ground: bool
    rects: np.ndarray      # (F, 4): u_min, u_max, v_min, v_max on the other axes
    loss_db: np.ndarray    # (F,) per-face reflection loss


@dataclass
class _Geometry:
    planes: list[_Plane]
    boxes_shrunk: np.ndarray   # (B, 2, 3): min/max corners for occlusion tests


def _covered_by_neighbor(scene: Scene, bi: int, axis: int, offset: float, sign: float) -> bool:
    """True if the face is flush against another building that fully covers it."""
    b = scene.buildings[bi]
    u, v = _OTHER_AXES[axis]
    for j, other in enumerate(scene.buildings):
        if j == bi:
            continue
        near = other.min_corner[axis] if sign > 0 else other.max_corner[axis]
        if abs(near - offset) > _RECT_TOL:
            continue
        if (
            other.min_corner[u] <= b.min_corner[u] + _RECT_TOL
            and other.max_corner[u] >= b.max_corner[u] - _RECT_TOL
            and other.min_corner[v] <= b.min_corner[v] + _RECT_TOL
            and other.max_corner[v] >= b.max_corner[v] - _RECT_TOL
        ):
            return True
    return False


def _build_geometry(scene: Scene) -> _Geometry:
    grouped: dict[tuple[int, float, float], tuple[float, list[tuple[list[float], float]]]] = {}
    for bi, b in enumerate(scene.buildings):
        loss = scene.reflection_loss_db(b.material_id)
        for axis in range(3):
            u, v = _OTHER_AXES[axis]
            rect = [b.min_corner[u], b.max_corner[u], b.min_corner[v], b.max_corner[v]]
            for sign, offset in ((-1.0, b.min_corner[axis]), (1.0, b.max_corner[axis])):
                if axis == 2 and sign < 0:
                    continue  # building undersides sit on the ground
                if _covered_by_neighbor(scene, bi, axis, offset, sign):
                    continue
                key = (axis, round(offset, 9), sign)
                grouped.setdefault(key, (offset, []))[1].append((rect, loss))

    planes = [
        _Plane(
            axis=2, offset=scene.ground_z, sign=1.0, is_ground=True,
            rects=np.empty((0, 4)),
            loss_db=np.array([scene.reflection_loss_db(GROUND_MATERIAL)]),
        )
    ]
    for (axis, _key_offset, sign), (offset, faces) in sorted(grouped.items()):
        planes.append(
            _Plane(
                axis=axis, offset=float(offset), sign=sign, is_ground=False,
                rects=np.array([f[0] for f in faces], dtype=float),
                loss_db=np.array([f[1] for f in faces], dtype=float),
            )
        )

    if scene.buildings:
        mins = np.array([b.min_corner for b in scene.buildings], dtype=float)
        maxs = np.array([b.max_corner for b in scene.buildings], dtype=float)
        boxes = np.stack([mins + _SHRINK, maxs - _SHRINK], axis=1)
    else:
        boxes = np.empty((0, 2, 3))
    return _Geometry(planes=planes, boxes_shrunk=boxes)


_geometry_cache: "weakref.WeakKeyDictionary[Scene, _Geometry]" = weakref.WeakKeyDictionary()


def _geometry(scene: Scene) -> _Geometry:
    geo = _geometry_cache.get(scene)
    if geo is None:
        geo = _build_geometry(scene)
        _geometry_cache[scene] = geo
    return geo


# ---------------------------------------------------------------------------
# Image tree
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    seq: tuple[int, ...]       # plane indices, in bounce order
    images: np.ndarray         # (n+1, 3): tx image after 0..n mirrors


def _image_tree(geo: _Geometry, tx: np.ndarray, max_reflections: int) -> list[_Node]:
    """Enumerate mirrored-source images, pruned by the front-side condition:
    the previous image must lie strictly on the reflective side of the next
    plane. Consecutive bounces off the same oriented plane are impossible."""
    root = _Node(seq=(), images=tx[None, :].copy())
    nodes = [root]
    frontier = [root]
    for _ in range(max_reflections):
        nxt: list[_Node] = []
        for node in frontier:
            img = node.images[-1]
            last = node.seq[-1] if node.seq else -1
            for pi, pl in enumerate(geo.planes):
                if pi == last:
                    continue
                if pl.sign * (img[pl.axis] - pl.offset) <= _EPS_SIDE:
                    continue
                child = _Node(
                    seq=node.seq + (pi,),
                    images=np.vstack([node.images, mirror_point(img, pl.axis, pl.offset)]),
                )
                nxt.append(child)
        nodes.extend(nxt)
        frontier = nxt
    return nodes


# ---------------------------------------------------------------------------
# Path search
# ---------------------------------------------------------------------------

def _segments_blocked(
    p0: np.ndarray, p1: np.ndarray, boxes: np.ndarray
) -> np.ndarray:
    """Slab test: does segment p0->p1 (both (U,3)) penetrate any shrunk box?"""
    U = p0.shape[0]
    if boxes.shape[0] == 0 or U == 0:
        return np.zeros(U, dtype=bool)
    d = p1 - p0                                    # (U, 3)
    bmin = boxes[None, :, 0, :]                    # (1, B, 3)
    bmax = boxes[None, :, 1, :]
    a = p0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (bmin - a) / d[:, None, :]
        t2 = (bmax - a) / d[:, None, :]
    tlo = np.fmin(t1, t2)
    thi = np.fmax(t1, t2)
    zero = np.abs(d)[:, None, :] == 0.0
    inside = (a >= bmin) & (a <= bmax)
    tlo = np.where(zero, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(zero, np.where(inside, np.inf, -np.inf), thi)
    tmin = np.maximum(tlo.max(axis=2), 0.0)
    tmax = np.minimum(thi.min(axis=2), 1.0)
    return (tmin + _EPS_T < tmax).any(axis=1)


def _node_paths(
    node: _Node,
    geo: _Geometry,
    tx: np.ndarray,
    rx: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Valid specular paths of one image node against all receivers.

    Returns (user_rows, lengths, loss_db_sums, chain) where chain is the
    (n+2, U', 3) polyline tx -> bounce points -> rx for the valid users.
    """
    U = rx.shape[0]
    n = len(node.seq)
    rows = np.arange(U)
    pts = rx
    loss_db = np.zeros(U)
    chain_rev = [rx]

    for i in range(n, 0, -1):
        pl = geo.planes[node.seq[i - 1]]
        img = node.images[i]
        denom = img[pl.axis] - pts[:, pl.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pl.offset - pts[:, pl.axis]) / denom
            ok = np.isfinite(t) & (t > _EPS_T) & (t < 1.0 - _EPS_T)
            q = pts + np.where(ok, t, 0.0)[:, None] * (img[None, :] - pts)
        if pl.is_ground:
            face_loss = np.full(pts.shape[0], pl.loss_db[0])
        else:
            u_ax, v_ax = _OTHER_AXES[pl.axis]
            qu = q[:, u_ax][:, None]
            qv = q[:, v_ax][:, None]
            r = pl.rects[None, :, :]
            hit = (
                (qu >= r[:, :, 0] - _RECT_TOL) & (qu <= r[:, :, 1] + _RECT_TOL)
                & (qv >= r[:, :, 2] - _RECT_TOL) & (qv <= r[:, :, 3] + _RECT_TOL)
            )
            any_hit = hit.any(axis=1)
            ok &= any_hit
            first = np.argmax(hit, axis=1)
            face_loss = pl.loss_db[first]
        if not ok.all():
            if not ok.any():
                return (np.empty(0, dtype=int), np.empty(0), np.empty(0),
                        np.empty((n + 2, 0, 3)))
            rows = rows[ok]
            q = q[ok]
            face_loss = face_loss[ok]
            loss_db = loss_db[ok]
            chain_rev = [c[ok] for c in chain_rev]
        loss_db = loss_db + face_loss
        pts = q
        chain_rev.append(q)

    chain = [np.broadcast_to(tx, (rows.size, 3))] + chain_rev[::-1]
    # Occlusion: every leg must clear every (shrunk) building box.
    keep = np.ones(rows.size, dtype=bool)
    for s in range(len(chain) - 1):
        live = np.nonzero(keep)[0]
        if live.size == 0:
            break
        blocked = _segments_blocked(
            np.ascontiguousarray(chain[s][live]),
            np.ascontiguousarray(chain[s + 1][live]),
            geo.boxes_shrunk,
        )
        keep[live[blocked]] = False
    if not keep.all():
        rows = rows[keep]
        loss_db = loss_db[keep]
        chain = [c[keep] for c in chain]
    lengths = np.linalg.norm(node.images[-1][None, :] - chain[-1], axis=1)
    return rows, lengths, loss_db, np.stack(chain, axis=0)


def _angles_deg(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth in [-180, 180) and polar elevation in [0, 180] for (U,3) vectors."""
    az = np.degrees(np.arctan2(direction[:, 1], direction[:, 0]))
    az = np.where(az >= 180.0, az - 360.0, az)
    norm = np.linalg.norm(direction, axis=1)
    el = np.degrees(np.arccos(np.clip(direction[:, 2] / norm, -1.0, 1.0)))
    return az, el


def trace_paths_batch(
    scene: Scene,
    bs_id: int,
    positions: np.ndarray,
    user_indices: Sequence[int] | None = None,
    max_reflections: int = 4,
    max_paths: int = 25,
) -> list[PathList]:
    """Trace all paths between one base station and a batch of receivers."""
    bs = scene.bs_by_id(bs_id)
    tx = np.asarray(bs.position, dtype=float)
    rx = np.asarray(positions, dtype=float).reshape(-1, 3)
    U = rx.shape[0]
    if user_indices is None:
        user_indices = list(range(1, U + 1))

    geo = _geometry(scene)
    nodes = _image_tree(geo, tx, max_reflections)

    # Per-user accumulation: (sort_key_fields..., record)
    per_user: list[list[tuple]] = [[] for _ in range(U)]
    freq = scene.carrier_freq
    lam = scene.wavelength

    for node_id, node in enumerate(nodes):
        rows, lengths, loss_db, chain = _node_paths(node, geo, tx, rx)
        if rows.size == 0:
            continue
        n = len(node.seq)
        aod_az, aod_el = _angles_deg(chain[1] - chain[0])
        aoa_az, aoa_el = _angles_deg(chain[-2] - chain[-1])
        delays = lengths / SPEED_OF_LIGHT
        powers = (lam / (4.0 * math.pi * lengths)) ** 2 * 10.0 ** (-loss_db / 10.0)
        phases = (-2.0 * math.pi * freq * delays + math.pi * n) % (2.0 * math.pi)
        for j, u in enumerate(rows):
            rec = PathRecord(
                aod_az=float(aod_az[j]), aod_el=float(aod_el[j]),
                aoa_az=float(aoa_az[j]), aoa_el=float(aoa_el[j]),
                power=float(powers[j]), phase=float(phases[j]),
                delay=float(delays[j]), n_reflections=n,
            )
            per_user[u].append((-rec.power, rec.delay, node.seq, rec))

    out = []
    for u in range(U):
        entries = sorted(per_user[u], key=lambda e: (e[0], e[1], e[2]))[:max_paths]
        out.append(
            PathList(
                bs_id=bs_id,
                user_index=int(user_indices[u]),
                user_position=tuple(float(x) for x in rx[u]),
                paths=tuple(e[3] for e in entries),
            )
        )
    return out


def trace_paths(
    scene: Scene,
    bs_id: int,
    user_position: Sequence[float],
    max_reflections: int = 4,
    max_paths: int = 25,
    user_index: int = 0,
) -> PathList:
    """Trace LOS and specular paths between one base station and one receiver."""
    result = trace_paths_batch(
        scene, bs_id, np.asarray(user_position, dtype=float)[None, :],
        user_indices=[user_index],
        max_reflections=max_reflections, max_paths=max_paths,
    )
    return result[0]


def trace_between(
    scene: Scene,
    tx: Sequence[float],
    rx: Sequence[float],
    max_reflections: int = 4,
    max_paths: int = 25,
) -> tuple[PathRecord, ...]:
    """Trace between two arbitrary points (used for reciprocity checks)."""
    tx = np.asarray(tx, dtype=float)
    rx_arr = np.asarray(rx, dtype=float)[None, :]
    geo = _geometry(scene)
    nodes = _image_tree(geo, tx, max_reflections)

    entries = []
    freq = scene.carrier_freq
    lam = scene.wavelength
    for node in nodes:
        rows, lengths, loss_db, chain = _node_paths(node, geo, tx, rx_arr)
        if rows.size == 0:
            continue
        n = len(node.seq)
        aod_az, aod_el = _angles_deg(chain[1] - chain[0])
        aoa_az, aoa_el = _angles_deg(chain[-2] - chain[-1])
        delay = float(lengths[0] / SPEED_OF_LIGHT)
        power = float((lam / (4.0 * math.pi * lengths[0])) ** 2 * 10.0 ** (-loss_db[0] / 10.0))
        rec = PathRecord(
            aod_az=float(aod_az[0]), aod_el=float(aod_el[0]),
            aoa_az=float(aoa_az[0]), aoa_el=float(aoa_el[0]),
            power=power,
            phase=(-2.0 * math.pi * freq * delay + math.pi * n) % (2.0 * math.pi),
            delay=delay, n_reflections=n,
        )
        entries.append((-rec.power, rec.delay, node.seq, rec))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return tuple(e[3] for e in entries[:max_paths])
