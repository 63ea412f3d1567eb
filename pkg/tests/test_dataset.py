import logging

import numpy as np
import pytest

from mimogen.channel import ChannelMatrix, channel_matrix
from mimogen.dataset import (
    Dataset,
    DatasetError,
    Manifest,
    ManifestEntry,
    MissingRaySourceError,
    ScenarioMismatchError,
    UserEntry,
    active_user_indices,
    build_dataset,
    compute_channels_parallel,
    content_hash,
    export_dataset,
    get_channel,
    get_location,
    load_dataset,
    parse_shard,
    shard_bytes,
    shard_size_bytes,
)
from mimogen.params import ParamSet
from mimogen.rayio import RayFile, RayFileHeader
from mimogen.scene import build_o1_scene, parse_scene_config, user_positions

from conftest import random_path_list


@pytest.fixture(scope="module")
def tiny_scene():
    # grid1: rows 1-2 (3 users each), grid2: row 3, grid3: row 4
    return build_o1_scene(parse_scene_config(
        "grid1.n_rows=2\ngrid1.users_per_row=3\n"
        "grid2.n_rows=1\ngrid2.users_per_row=1\n"
        "grid3.n_rows=1\ngrid3.users_per_row=1\n"
    ))


def _params(**kw):
    base = dict(active_bs=(3, 5), active_user_first=1, active_user_last=2,
                num_ant_x=1, num_ant_y=4, num_ant_z=2,
                num_ofdm=16, ofdm_limit=8, num_paths=5)
    base.update(kw)
    return ParamSet(**base)


def _ray_sources(rng, scene, params, skip=()):
    """In-memory ray files with random paths for every active user."""
    indices = active_user_indices(scene, params)
    positions = user_positions(scene, indices)
    sources = {}
    for bs_id in params.active_bs:
        records = []
        for gidx, pos in zip(indices, positions):
            if (bs_id, int(gidx)) in skip:
                continue
            pl = random_path_list(rng, bs_id, int(gidx))
            records.append(type(pl)(bs_id=bs_id, user_index=int(gidx),
                                    user_position=tuple(pos), paths=pl.paths))
        sources[bs_id] = RayFile(
            header=RayFileHeader(bs_id=bs_id, carrier_freq=scene.carrier_freq,
                                 user_count=len(records), scenario="O1_60"),
            records=tuple(records),
        )
    return sources


class TestBuild:
    def test_shape_and_ordinals(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        assert ds.bs_ids == (3, 5)
        assert ds.n_users == 6
        assert ds.bs_for_ordinal(1) == 3
        assert ds.bs_for_ordinal(2) == 5
        assert ds.user_for_ordinal(1) == 1
        assert ds.user_for_ordinal(6) == 6

    def test_ordinal_bounds(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        with pytest.raises(IndexError, match="1..2"):
            ds.bs_for_ordinal(3)
        with pytest.raises(IndexError, match="1..6"):
            ds.user_for_ordinal(0)
        with pytest.raises(IndexError):
            get_channel(ds, 1, 7)

    def test_channels_match_direct_construction(self, rng, tiny_scene):
        p = _params()
        sources = _ray_sources(rng, tiny_scene, p)
        ds = build_dataset(sources, p, tiny_scene)
        for b_ord, bs_id in enumerate(ds.bs_ids, start=1):
            by_index = {pl.user_index: pl for pl in sources[bs_id].records}
            for u_ord in range(1, ds.n_users + 1):
                gidx = ds.user_for_ordinal(u_ord)
                want = channel_matrix(by_index[gidx], p).entries
                got = get_channel(ds, b_ord, u_ord).entries
                assert np.max(np.abs(got - want)) < 1e-12 * (1 + np.max(np.abs(want)))

    def test_locations(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        indices = active_user_indices(tiny_scene, p)
        positions = user_positions(tiny_scene, indices)
        for u_ord in range(1, ds.n_users + 1):
            assert get_location(ds, 1, u_ord) == pytest.approx(
                tuple(positions[u_ord - 1])
            )

    def test_missing_source(self, rng, tiny_scene):
        p = _params()
        sources = _ray_sources(rng, tiny_scene, p)
        del sources[5]
        with pytest.raises(MissingRaySourceError, match="5"):
            build_dataset(sources, p, tiny_scene)

    def test_scenario_mismatch(self, rng, tiny_scene):
        p = _params()
        sources = _ray_sources(rng, tiny_scene, p)
        h = sources[5].header
        sources[5] = RayFile(
            header=RayFileHeader(bs_id=5, carrier_freq=h.carrier_freq,
                                 user_count=h.user_count, scenario="other"),
            records=sources[5].records,
        )
        with pytest.raises(ScenarioMismatchError, match="other"):
            build_dataset(sources, p, tiny_scene)

    def test_missing_user_zero_channel(self, rng, tiny_scene, caplog):
        p = _params()
        sources = _ray_sources(rng, tiny_scene, p, skip={(3, 4)})
        with caplog.at_level(logging.WARNING, logger="mimogen.dataset"):
            ds = build_dataset(sources, p, tiny_scene)
        assert np.all(get_channel(ds, 1, 4).entries == 0)
        assert any("user 4" in r.getMessage() for r in caplog.records)
        # other users unaffected
        assert np.any(get_channel(ds, 1, 3).entries != 0)

    def test_progress_reaches_total(self, rng, tiny_scene):
        p = _params()
        calls = []
        build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene,
                      progress=lambda d, t: calls.append((d, t)))
        assert calls[-1] == (12, 12)


class TestShard:
    def test_size_formula_matches(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        data = shard_bytes(p, ds.scenario_name, 3, ds.per_bs[0])
        assert len(data) == shard_size_bytes(p, ds.n_users, ds.scenario_name, 3)

    def test_roundtrip_bit_exact(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        data = shard_bytes(p, ds.scenario_name, 3, ds.per_bs[0])
        p2, scen, bs_id, users = parse_shard(data)
        assert (p2, scen, bs_id) == (p, "O1_60", 3)
        for a, b in zip(ds.per_bs[0], users):
            assert a.global_index == b.global_index
            assert a.location == b.location
            assert np.array_equal(a.channel.entries, b.channel.entries)

    def test_trailing_bytes_rejected(self, rng, tiny_scene):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        data = shard_bytes(p, ds.scenario_name, 3, ds.per_bs[0])
        with pytest.raises(DatasetError, match="does not match"):
            parse_shard(data + b"\x00")

    def test_bad_magic(self):
        with pytest.raises(DatasetError, match="magic"):
            parse_shard(b"NOPE" + b"\x00" * 20)


class TestExportImport:
    def test_binary_roundtrip(self, rng, tiny_scene, tmp_path):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        manifest = export_dataset(ds, tmp_path / "out")
        assert len(manifest.entries) == 2
        ds2 = load_dataset(tmp_path / "out")
        assert ds2.params == ds.params
        assert ds2.bs_ids == ds.bs_ids
        assert ds2.scenario_name == ds.scenario_name
        for bi in range(2):
            for a, b in zip(ds.per_bs[bi], ds2.per_bs[bi]):
                assert np.array_equal(a.channel.entries, b.channel.entries)
                assert a.location == b.location

    def test_export_deterministic(self, rng, tiny_scene, tmp_path):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        m1 = export_dataset(ds, tmp_path / "a")
        m2 = export_dataset(ds, tmp_path / "b")
        assert [e.content_hash for e in m1.entries] == [e.content_hash for e in m2.entries]
        for e in m1.entries:
            assert (tmp_path / "a" / e.filename).read_bytes() == \
                (tmp_path / "b" / e.filename).read_bytes()

    def test_tamper_detected(self, rng, tiny_scene, tmp_path):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        export_dataset(ds, tmp_path / "out")
        shard = tmp_path / "out" / "shard_bs003.dmds"
        data = bytearray(shard.read_bytes())
        data[-1] ^= 0x01
        shard.write_bytes(bytes(data))
        with pytest.raises(DatasetError, match="hash mismatch"):
            load_dataset(tmp_path / "out")

    def test_manifest_text_roundtrip(self):
        m = Manifest((ManifestEntry("shard_bs003.dmds", 3, 1, 6, 1234, "ab" * 8),))
        assert Manifest.from_text(m.to_text()) == m

    def test_csv_export(self, rng, tiny_scene, tmp_path):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        manifest = export_dataset(ds, tmp_path / "csv", fmt="csv")
        f = tmp_path / "csv" / manifest.entries[0].filename
        lines = f.read_text().strip().splitlines()
        # header + one row per (user, k, antenna)
        assert len(lines) == 1 + ds.n_users * 8 * 8
        assert lines[0].startswith("user_index,")

    def test_csv_cap(self, tmp_path):
        p = ParamSet(active_bs=(1,), num_ant_x=1, num_ant_y=32, num_ant_z=8,
                     num_ofdm=1024, ofdm_limit=1024)
        zeros = np.zeros((256, 1024), dtype=complex)
        users = tuple(
            UserEntry(i, (0.0, 0.0, 0.0), ChannelMatrix(zeros, 1, i))
            for i in range(1, 7)
        )
        ds = Dataset(params=p, scenario_name="O1_60", bs_ids=(1,), per_bs=(users,))
        with pytest.raises(DatasetError, match="csv export refused"):
            export_dataset(ds, tmp_path / "big", fmt="csv")

    def test_unknown_format(self, rng, tiny_scene, tmp_path):
        p = _params()
        ds = build_dataset(_ray_sources(rng, tiny_scene, p), p, tiny_scene)
        with pytest.raises(ValueError, match="parquet"):
            export_dataset(ds, tmp_path / "x", fmt="parquet")

    def test_load_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)


class TestHash:
    def test_hash_is_sha256_prefix(self):
        import hashlib
        assert content_hash(b"abc") == hashlib.sha256(b"abc").hexdigest()[:16]
        assert len(content_hash(b"")) == 16

    def test_hash_sensitivity(self):
        assert content_hash(b"a") != content_hash(b"b")


class TestParallel:
    def test_serial_vs_parallel_digest(self, rng):
        p = ParamSet(num_ant_x=1, num_ant_y=4, num_ant_z=1,
                     num_ofdm=16, ofdm_limit=8)
        pls = [random_path_list(rng, 3, i) for i in range(1, 41)]
        d1 = compute_channels_parallel(pls, p, workers=1, chunk_size=7)
        d2 = compute_channels_parallel(pls, p, workers=2, chunk_size=7)
        assert d1 == d2

    def test_digest_depends_on_input(self, rng):
        p = ParamSet(num_ant_x=1, num_ant_y=4, num_ant_z=1,
                     num_ofdm=16, ofdm_limit=8)
        a = [random_path_list(rng, 3, i) for i in range(1, 11)]
        b = [random_path_list(rng, 3, i) for i in range(1, 11)]
        assert compute_channels_parallel(a, p) != compute_channels_parallel(b, p)

    def test_progress(self, rng):
        p = ParamSet(num_ant_x=1, num_ant_y=2, num_ant_z=1,
                     num_ofdm=8, ofdm_limit=8)
        pls = [random_path_list(rng, 3, i) for i in range(1, 21)]
        calls = []
        compute_channels_parallel(pls, p, workers=1, chunk_size=6,
                                  progress=lambda d, t: calls.append((d, t)))
        assert calls == [(6, 20), (12, 20), (18, 20), (20, 20)]
