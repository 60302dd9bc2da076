import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexsec import channel as ch
from flexsec.channel import SimConfig


def fspl_db(d, f):
    # independent closed form: 20 log10(4 pi d f / c)
    return 20.0 * math.log10(4.0 * math.pi * d * f / 2.99792458e8)


def test_positions_respect_separation_and_area():
    cfg = SimConfig(n_pairs=2, n_eves=2, seed=7)
    users, eves = ch.sample_positions(cfg, np.random.default_rng(7))
    pts = np.vstack([users, eves])
    assert pts.shape == (6, 2)
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    assert d[~np.eye(6, dtype=bool)].min() >= 10.0
    assert pts.min() >= 0.0 and pts.max() <= 1000.0


@settings(max_examples=100, deadline=None)
@given(n_pairs=st.integers(1, 20), n_eves=st.integers(1, 10), seed=st.integers(0, 2**63))
def test_positions_separation_property(n_pairs, n_eves, seed):
    cfg = SimConfig(n_pairs=n_pairs, n_eves=n_eves, min_separation_m=25.0, seed=seed)
    users, eves = ch.sample_positions(cfg, np.random.default_rng(seed))
    pts = np.vstack([users, eves])
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    n = len(pts)
    assert d[~np.eye(n, dtype=bool)].min() >= 25.0
    assert np.all((pts >= 0) & (pts <= cfg.area_side_m))


def test_zero_separation_is_plain_uniform():
    cfg = SimConfig(n_pairs=3, n_eves=2, min_separation_m=0.0)
    users, eves = ch.sample_positions(cfg, np.random.default_rng(0))
    assert users.shape == (6, 2) and eves.shape == (2, 2)


def test_overpacked_area_is_rejected():
    cfg = SimConfig(n_pairs=50000, n_eves=2)
    # 100002 points vs a packing bound of roughly (1000/10)^2
    with pytest.raises(ch.PlacementError):
        ch.sample_positions(cfg, np.random.default_rng(0))


def test_dart_budget_exhaustion_is_reported():
    with pytest.raises(ch.PlacementError, match="placed only"):
        ch.poisson_disk(100, 100.0, 10.0, np.random.default_rng(0), max_attempts=300)


def test_pairing_two_users():
    assert sorted(ch.pair_users(np.zeros((2, 2)), np.random.default_rng(3))) == [0, 1]


def _matching(perm):
    return frozenset(frozenset(perm[2 * i:2 * i + 2]) for i in range(len(perm) // 2))


def test_pairing_reproducible():
    a = ch.pair_users(np.zeros((4, 2)), np.random.default_rng(11))
    b = ch.pair_users(np.zeros((4, 2)), np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_pairing_uniform_over_matchings():
    counts = Counter(_matching(tuple(ch.pair_users(np.zeros((4, 2)), np.random.default_rng(s))))
                     for s in range(3000))
    assert len(counts) == 3
    for c in counts.values():
        assert 900 <= c <= 1100


@pytest.mark.parametrize("d, expected_db", [(1.0, -32.44), (1000.0, -92.44)])
def test_path_loss_values(d, expected_db):
    got = 10 * math.log10(ch.path_loss_linear(d, 1e9))
    assert got == pytest.approx(-fspl_db(d, 1e9), abs=1e-10)
    assert got == pytest.approx(expected_db, abs=0.01)


def test_path_loss_linear_value_at_one_metre():
    assert ch.path_loss_linear(1.0, 1e9) == pytest.approx(5.70e-4, rel=0.01)


def test_path_loss_inverse_square():
    ratio = ch.path_loss_linear(20.0, 1e9) / ch.path_loss_linear(10.0, 1e9)
    assert 10 * math.log10(ratio) == pytest.approx(-20 * math.log10(2), abs=1e-12)


def test_path_loss_domain():
    with pytest.raises(ValueError):
        ch.path_loss_linear(0.0, 1e9)


@settings(max_examples=100, deadline=None)
@given(d1=st.floats(1.0, 5000.0), d2=st.floats(1.0, 5000.0))
def test_path_loss_monotone(d1, d2):
    if d1 < d2:
        assert ch.path_loss_linear(d1, 1e9) > ch.path_loss_linear(d2, 1e9)


def test_deterministic_channel_limb():
    pl = ch.path_loss_linear(50.0, 1e9)
    assert ch.channel_coefficient(pl, 0.0, 1 + 0j) == math.sqrt(pl)


def test_rayleigh_unit_power():
    z = ch.draw_fading(100_000, np.random.default_rng(123))
    assert np.mean(np.abs(z) ** 2) == pytest.approx(1.0, abs=0.02)


def test_shadowing_spread_is_eight_db():
    x = ch.draw_shadowing_db(100_000, SimConfig(), np.random.default_rng(321))
    # 10 log10 of the linear shadow factor is the dB sample itself
    assert np.std(10 * np.log10(10 ** (x / 10))) == pytest.approx(8.0, abs=0.2)


def test_mean_received_power_matches_path_loss_times_shadow_mean():
    cfg = SimConfig()
    rng = np.random.default_rng(5)
    pl = ch.path_loss_linear(200.0, 1e9)
    h = ch.draw_channels(np.full(400_000, 200.0), cfg, rng)
    sigma = cfg.shadowing_db * math.log(10) / 10
    expected = pl * math.exp(sigma ** 2 / 2)  # E[10^(X/10)] for X ~ N(0, 8^2)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(expected, rel=0.05)


def test_generate_is_deterministic():
    cfg = SimConfig(n_pairs=3, n_eves=2, seed=1)
    a, b = ch.generate(cfg), ch.generate(cfg)
    assert ch.realization_to_bytes(a) == ch.realization_to_bytes(b)
    assert ch.generate(cfg, seed=2) != a


def test_generate_shapes_single_pair():
    r = ch.generate(SimConfig(n_pairs=1, n_eves=1, seed=0))
    assert r.H.shape == (2, 2) and r.G.shape == (2, 1) and r.D.shape == (2, 1)
    assert np.all(np.diag(r.H) == 0)


def test_power_conversions():
    cfg = SimConfig()
    assert cfg.pmax_w == pytest.approx(1.0, rel=1e-15)
    assert cfg.noise_w == pytest.approx(1e-13, rel=1e-12)


@pytest.mark.parametrize("kwargs", [dict(area_side_m=0), dict(n_pairs=0), dict(n_eves=0),
                                    dict(min_separation_m=-1)])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**63), n_pairs=st.integers(1, 5), n_eves=st.integers(1, 4))
def test_geometry_and_reciprocity(seed, n_pairs, n_eves):
    r = ch.generate(SimConfig(n_pairs=n_pairs, n_eves=n_eves, seed=seed))
    d = np.sqrt(((r.user_xy[:, None] - r.eve_xy[None]) ** 2).sum(-1))
    assert np.array_equal(r.D, d)
    off = ~np.eye(2 * n_pairs, dtype=bool)
    assert np.all(r.H[off] != r.H.T[off])
    assert np.all(np.isfinite(r.H)) and np.all(np.isfinite(r.G))


def test_binary_round_trip_and_errors(tmp_path):
    cfg = SimConfig(n_pairs=2, n_eves=3, seed=4)
    reals = ch.generate_many(cfg, 5)
    path = tmp_path / "d.bin"
    ch.save_dataset(path, reals)
    back = ch.load_dataset(path)
    assert back == reals
    raw = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-9])
    with pytest.raises(ch.FormatError):
        ch.load_dataset(tmp_path / "cut.bin")
    bumped = bytearray(raw)
    bumped[4] = 9
    (tmp_path / "ver.bin").write_bytes(bytes(bumped))
    with pytest.raises(ch.FormatError, match="version"):
        ch.load_dataset(tmp_path / "ver.bin")


def test_binary_layout_little_endian_row_major():
    r = ch.generate(SimConfig(n_pairs=1, n_eves=1, seed=9))
    raw = ch.realization_to_bytes(r)
    assert raw[:4] == b"FXNR"
    floats = np.frombuffer(raw[16:], dtype="<f8")
    assert floats[0] == r.noise_w and floats[1] == r.pmax_w
    np.testing.assert_array_equal(floats[2:6], r.user_xy.ravel())


def test_csv_export():
    r = ch.generate(SimConfig(n_pairs=1, n_eves=2, seed=9))
    lines = ch.realization_to_csv(r).strip().splitlines()
    assert lines[0] == "matrix,row,col,re,im"
    assert len(lines) == 1 + 2 + 4 + 4 + 4 + 4 + 4
