"""Per-subcarrier MIMO channel construction from traced path parameters.

For each path the contribution to subcarrier ``k`` (1-based index from the
sampled subcarrier set) is::

    sqrt(power / K) * exp(j * (phase + 2*pi*(k-1)/K * delay * B)) * a(az, el)

summed over the strongest ``num_paths`` paths, where ``a`` is the Kronecker
uniform-array response ``a_z (x) a_y (x) a_x`` and ``B`` the bandwidth in Hz.
Subcarrier 1 carries zero frequency offset by convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .params import ParamSet, subcarrier_set
from .tracer import PathList, PathRecord


@dataclass(frozen=True)
class ChannelMatrix:
    """Complex M x |K| matrix; column j is the channel at the j-th sampled
    subcarrier."""

    entries: np.ndarray
    bs_id: int = 0
    user_index: int = 0

    def __post_init__(self) -> None:
        if self.entries.ndim != 2:
            raise ValueError("channel matrix must be 2-D")


def array_response(
    aod_az: float,
    aod_el: float,
    dims: tuple[int, int, int],
    spacing: float,
) -> np.ndarray:
    """Unit-modulus array response for a uniform 3-D array.

    Angles in radians; elevation is the polar angle from +z. ``spacing`` is
    in wavelengths, so the per-element phase factor is ``2*pi*spacing``.
    Element ordering follows the Kronecker product a_z (x) a_y (x) a_x,
    i.e. the x index varies fastest.
    """
    mx, my, mz = dims
    kd = 2.0 * np.pi * spacing
    ax = np.exp(1j * kd * np.arange(mx) * np.sin(aod_el) * np.cos(aod_az))
    ay = np.exp(1j * kd * np.arange(my) * np.sin(aod_el) * np.sin(aod_az))
    az = np.exp(1j * kd * np.arange(mz) * np.cos(aod_el))
    return np.kron(az, np.kron(ay, ax))


def _truncated(paths: Sequence[PathRecord], num_paths: int) -> Sequence[PathRecord]:
    # Paths arrive sorted by power descending; keep the strongest num_paths.
    return paths[:num_paths]


def channel_vector(
    paths: Sequence[PathRecord],
    k: int,
    params: ParamSet,
) -> np.ndarray:
    """The M x 1 channel at 1-based subcarrier ``k``. Empty path list gives
    the zero vector; fewer than ``num_paths`` paths uses all available."""
    m = params.num_antennas
    h = np.zeros(m, dtype=complex)
    big_k = params.num_ofdm
    b_hz = params.bandwidth_hz
    k_off = k - 1
    for p in _truncated(paths, params.num_paths):
        gain = np.sqrt(p.power / big_k) * np.exp(
            1j * (p.phase + (2.0 * np.pi * k_off / big_k) * p.delay * b_hz)
        )
        h += gain * array_response(
            np.radians(p.aod_az), np.radians(p.aod_el), params.dims, params.ant_spacing
        )
    return h


def channel_matrix(paths: PathList | Sequence[PathRecord], params: ParamSet) -> ChannelMatrix:
    """Stack channel vectors for the whole sampled subcarrier set."""
    if isinstance(paths, PathList):
        bs_id, user_index, records = paths.bs_id, paths.user_index, paths.paths
    else:
        bs_id, user_index, records = 0, 0, tuple(paths)
    ks = subcarrier_set(params)
    m = params.num_antennas
    entries = np.zeros((m, ks.size), dtype=complex)
    for j, k in enumerate(ks):
        entries[:, j] = channel_vector(records, int(k), params)
    return ChannelMatrix(entries=entries, bs_id=bs_id, user_index=user_index)


def channel_matrices_batch(
    path_lists: Sequence[PathList],
    params: ParamSet,
) -> np.ndarray:
    """Vectorized channel construction for a batch of users.

    Returns a (U, M, |K|) complex array; semantically identical to calling
    :func:`channel_matrix` per user (the test suite checks this).
    """
    U = len(path_lists)
    ks = subcarrier_set(params)
    m = params.num_antennas
    out = np.zeros((U, m, ks.size), dtype=complex)
    if U == 0:
        return out

    L = params.num_paths
    power = np.zeros((U, L))
    phase = np.zeros((U, L))
    delay = np.zeros((U, L))
    az = np.zeros((U, L))
    el = np.zeros((U, L))
    mask = np.zeros((U, L), dtype=bool)
    for u, pl in enumerate(path_lists):
        recs = pl.paths[:L]
        n = len(recs)
        if n == 0:
            continue
        power[u, :n] = [r.power for r in recs]
        phase[u, :n] = [r.phase for r in recs]
        delay[u, :n] = [r.delay for r in recs]
        az[u, :n] = np.radians([r.aod_az for r in recs])
        el[u, :n] = np.radians([r.aod_el for r in recs])
        mask[u, :n] = True

    mx, my, mz = params.dims
    kd = 2.0 * np.pi * params.ant_spacing
    sin_el = np.sin(el)
    ex = np.exp(1j * kd * sin_el[..., None] * np.cos(az)[..., None] * np.arange(mx))
    ey = np.exp(1j * kd * sin_el[..., None] * np.sin(az)[..., None] * np.arange(my))
    ez = np.exp(1j * kd * np.cos(el)[..., None] * np.arange(mz))
    # (U, L, M) with x varying fastest, matching the Kronecker order.
    steer = (
        ez[:, :, :, None, None] * ey[:, :, None, :, None] * ex[:, :, None, None, :]
    ).reshape(U, L, m)

    big_k = params.num_ofdm
    k_off = (ks - 1).astype(float)
    gains = np.sqrt(power / big_k) * mask
    w = gains[..., None] * np.exp(
        1j * (phase[..., None] + (2.0 * np.pi / big_k) * delay[..., None]
              * params.bandwidth_hz * k_off)
    )
    np.einsum("ulm,ulk->umk", steer, w, out=out)
    return out
