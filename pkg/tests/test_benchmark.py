import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from w1bench import benchmark as bm
from w1bench import minfunnel as mf
from w1bench.errors import ConstructionError, OutOfBoxError, SamplerError, SchemaVersionError
from w1bench.minfunnel import MinFunnel


def test_generate_is_deterministic():
    a = bm.generate_pair(2, 4, seed=11)
    b = bm.generate_pair(2, 4, seed=11)
    assert bm.dumps_pair(a) == bm.dumps_pair(b)
    assert bm.dumps_pair(a) != bm.dumps_pair(bm.generate_pair(2, 4, seed=12))


def test_centers_inside_box():
    pair = bm.generate_pair(2, 4, seed=3)
    assert np.all(np.abs(pair.funnel.centers) <= 2.5)
    assert pair.box_halfwidth == 2.5 and pair.power == 8.0 and pair.orientation == "reversed"


def test_offsets_have_variance_one_tenth():
    b = np.concatenate([bm.generate_pair(1, 256, seed=s).funnel.offsets for s in range(40)])
    assert abs(b.mean()) < 4 * np.sqrt(0.1 / b.size)
    assert b.std() == pytest.approx(np.sqrt(0.1), rel=0.05)


def test_power_must_exceed_one():
    with pytest.raises(ConstructionError):
        bm.generate_pair(2, 4, power=1.0)
    with pytest.raises(ConstructionError):
        bm.BenchmarkPair(MinFunnel([[0.0]], [0.0]), orientation="sideways")


def test_map_hand_example():
    pair = bm.BenchmarkPair(MinFunnel([[0.0, 0.0]], [0.0]), box_halfwidth=1.0, power=2.0)
    np.testing.assert_allclose(bm.map_T(pair, [0.5, 0.0]), [0.25, 0.0], atol=1e-15)


def test_map_fixes_ray_bottom():
    pair = bm.BenchmarkPair(MinFunnel([[0.0, 0.0]], [0.0]), box_halfwidth=1.0, power=2.0)
    np.testing.assert_array_equal(bm.map_T(pair, [0.0, 0.0]), [0.0, 0.0])


def test_map_rejects_points_outside_box():
    pair = bm.generate_pair(2, 4, seed=0)
    with pytest.raises(OutOfBoxError):
        bm.map_T(pair, [3.0, 0.0])


@pytest.mark.parametrize("dim", [2, 4, 8])
def test_ray_monotone_identity(dim, rng):
    pair = bm.generate_pair(dim, 16, seed=dim)
    X = rng.uniform(-2.5, 2.5, (5000, dim))
    res = bm.transport_batch(pair, X)
    u = pair.funnel
    gap = u(X) - u(res.y) - np.linalg.norm(X - res.y, axis=1)
    assert np.max(np.abs(gap)) <= 1e-9
    assert np.mean(~res.moved) <= 1e-3
    assert np.all(u(res.y) <= u(X) + 1e-12)


def test_forward_sample_moves_towards_center(rng):
    pair = bm.BenchmarkPair(MinFunnel([[0.0, 0.0]], [0.0]), power=8.0, orientation="forward")
    X, Y = bm.sample(pair, 4000, rng)
    assert X.shape == Y.shape == (4000, 2)
    assert np.linalg.norm(Y, axis=1).mean() < np.linalg.norm(X, axis=1).mean()


def test_reversed_marginals_swap_forward_ones():
    fwd = bm.generate_pair(2, 4, seed=5, orientation="forward")
    rev = fwd.reversed()
    Xf, Yf = bm.sample(fwd, 4000, np.random.default_rng(1))
    Xr, Yr = bm.sample(rev, 4000, np.random.default_rng(2))
    for a, b in ((Yf, Xr), (Xf, Yr)):
        for k in range(2):
            assert stats.ks_2samp(a[:, k], b[:, k]).pvalue > 1e-3


def test_sampler_is_deterministic():
    pair = bm.generate_pair(3, 4, seed=1)
    a = bm.sample(pair, 100, np.random.default_rng(9))
    b = bm.sample(pair, 100, np.random.default_rng(9))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_noisy_base_stays_in_box(rng):
    base = bm.TruncatedNoisySampler(((0.0, 0.0), (1.0, -1.0)), 0.5, 2.0)
    pair = bm.BenchmarkPair(bm.generate_pair(2, 4, seed=0).funnel, base=base)
    X, Y = bm.sample(pair, 500, rng)
    assert np.all(np.abs(Y) <= 2.0)


def test_noisy_base_rejecting_everything_raises(rng):
    base = bm.TruncatedNoisySampler(((50.0, 50.0),), 0.1, 2.5)
    with pytest.raises(SamplerError):
        base.sample(100, 2, 2.5, rng)


def test_ground_truth_zero_for_near_identity_map():
    pair = bm.BenchmarkPair(bm.generate_pair(2, 4, seed=0).funnel, power=1.0 + 1e-13)
    assert bm.ground_truth(pair, 2000).w1 < 1e-9


def test_ground_truth_gradients_are_unit_and_signed(rng):
    pair = bm.generate_pair(4, 4, seed=2)
    truth = bm.ground_truth(pair, 4096)
    Y, G = truth.sample_with_grad(500, rng)
    np.testing.assert_allclose(np.linalg.norm(G, axis=1), 1.0, atol=1e-12)
    Gp, ok = truth.grad_at(Y)
    np.testing.assert_allclose(Gp[ok], G[ok], atol=1e-8)
    Gu, _ = mf.grad_batch(pair.funnel, Y)
    np.testing.assert_allclose(Gp[ok], -Gu[ok])


@pytest.mark.parametrize("orientation", ["forward", "reversed"])
def test_dual_at_true_potential_equals_ground_truth(orientation):
    pair = bm.generate_pair(4, 16, seed=8, orientation=orientation)
    truth = bm.ground_truth(pair, 2**14)
    X, Y = bm.sample(pair, 2**14, np.random.default_rng(4))
    f = pair.sign * pair.funnel(np.vstack([X, Y]))
    n = len(X)
    dual = f[:n].mean() - f[n:].mean()
    se = np.sqrt(f[:n].var() / n + f[n:].var() / n + truth.w1_se**2)
    assert abs(dual - truth.w1) <= 3 * se


@given(st.integers(0, 2**31))
def test_lipschitz_witnesses_never_beat_ground_truth(seed):
    rng = np.random.default_rng(seed)
    pair = bm.generate_pair(2, 4, seed=3, orientation="forward")
    truth = bm.ground_truth(pair, 4096)
    X, Y = bm.sample(pair, 4096, rng)
    w = rng.standard_normal(2)
    w /= np.linalg.norm(w)
    g = np.concatenate([X, Y]) @ w
    se = np.sqrt((g[:4096].var() + g[4096:].var()) / 4096 + truth.w1_se**2)
    assert g[:4096].mean() - g[4096:].mean() <= truth.w1 + 3 * se


def test_save_load_round_trip(tmp_path):
    pair = bm.generate_pair(3, 5, seed=21)
    path = tmp_path / "p.json"
    bm.save_pair(pair, path)
    first = path.read_bytes()
    again = bm.load_pair(path)
    assert again == pair
    bm.save_pair(again, path)
    assert path.read_bytes() == first


def test_load_rejects_unknown_version(tmp_path):
    d = bm.pair_to_dict(bm.generate_pair(2, 2, seed=0))
    d["version"] = 99
    path = tmp_path / "p.json"
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaVersionError):
        bm.load_pair(path)
    del d["offsets"]
    d["version"] = 1
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaVersionError):
        bm.load_pair(path)


def test_load_rejects_degenerate_pair(tmp_path):
    d = bm.pair_to_dict(bm.generate_pair(1, 2, seed=0))
    d["centers"] = [[0.0], [1.0]]
    d["offsets"] = [0.0, 1.0]
    path = tmp_path / "p.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ConstructionError):
        bm.load_pair(path)


def test_noisy_base_round_trips():
    base = bm.TruncatedNoisySampler(((0.0, 0.5),), 0.3, 2.0)
    pair = bm.BenchmarkPair(bm.generate_pair(2, 3, seed=0).funnel, base=base, orientation="forward")
    assert bm.pair_from_dict(json.loads(bm.dumps_pair(pair))) == pair
