import numpy as np
import pytest

from tensorce.channel import (
    ObservationBatch,
    PathParameters,
    add_noise,
    build_geometry,
    channel_matrix,
    generate_pilots,
    sample_paths,
    steering_factors,
    substream,
    synthesize_channels,
    synthesize_observations,
)

from oracles import channel_loop


def test_geometry_default_grid():
    g = build_geometry((8, 8, 8), 0.5, 1.0)
    np.testing.assert_allclose(g.coords[0], np.arange(8) * 0.5)
    assert g.n_antennas == 512
    assert build_geometry().spacing == (0.5, 0.5, 0.5)


def test_geometry_single_antenna_and_ura():
    g = build_geometry((1, 1, 1))
    np.testing.assert_array_equal(g.antenna_positions(), [[0.0, 0.0, 0.0]])
    assert build_geometry((4, 2, 1)).n_antennas == 8


def test_antenna_order_matches_channel_matrix():
    g = build_geometry((2, 3, 4))
    pos = g.antenna_positions()
    i1, i2, i3 = 1, 2, 3
    assert np.allclose(pos[(i1 * 3 + i2) * 4 + i3], [0.5, 1.0, 1.5])
    H = np.arange(24).reshape(1, 2, 3, 4)
    assert channel_matrix(H)[0, (i1 * 3 + i2) * 4 + i3] == H[0, i1, i2, i3]


@pytest.mark.parametrize("bad", [dict(dims=(0, 1, 1)), dict(spacing=-1.0), dict(wavelength=0.0)])
def test_geometry_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        build_geometry(**bad)


def test_sample_paths_counts_and_determinism():
    p = sample_paths(5, 3, 42)
    assert sum(p.ranks) == 15 and p.n_users == 5
    q = sample_paths(5, 3, 42)
    for a, b in zip(p.gains, q.gains):
        np.testing.assert_array_equal(a, b)


def test_path_gain_power():
    g = sample_paths(1, 100_000, 0).gains[0]
    assert 0.99 <= np.mean(np.abs(g) ** 2) <= 1.01


def test_path_parameters_validation():
    with pytest.raises(ValueError):
        PathParameters([np.ones(2)], [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(ValueError):
        PathParameters([np.ones(1)], [np.array([2.0])], [np.zeros(1)])


def test_steering_broadside_and_endfire():
    g = build_geometry((4, 4, 4))
    U, V, P = steering_factors(g, [1.0], [0.0], [0.7])
    np.testing.assert_allclose(U, 1.0)
    np.testing.assert_allclose(V, 1.0)
    np.testing.assert_allclose(P[:, 0], [1, -1, 1, -1], atol=1e-12)
    U, V, P = steering_factors(g, [1.0], [np.pi / 2], [0.0])
    np.testing.assert_allclose(P, 1.0, atol=1e-12)
    np.testing.assert_allclose(U[:, 0], np.exp(1j * np.pi * np.arange(4)), atol=1e-12)


def test_steering_unit_modulus():
    p = sample_paths(1, 4, 3)
    U, V, _ = steering_factors(build_geometry((5, 6, 7)), *p.user(0))
    np.testing.assert_allclose(np.abs(U), 1.0)
    np.testing.assert_allclose(np.abs(V), 1.0)


def test_single_path_unit_modulus_channel():
    g = build_geometry((3, 3, 3))
    H = synthesize_channels(g, PathParameters([np.array([1.0])], [np.array([0.0])], [np.array([0.3])]))
    np.testing.assert_allclose(np.abs(H), 1.0)


def test_channels_match_direct_evaluation():
    g = build_geometry((3, 4, 5), (0.4, 0.5, 0.6), 1.3)
    p = sample_paths(2, 3, 9)
    H = synthesize_channels(g, p)
    for n in range(2):
        ref = channel_loop(g.dims, g.spacing, g.wavelength, *p.user(n))
        assert np.max(np.abs(H[n] - ref)) < 1e-12


def test_opposite_gains_cancel():
    g = build_geometry((3, 3, 3))
    p = PathParameters([np.array([0.5 + 1j, -0.5 - 1j])], [np.array([0.4, 0.4])], [np.array([1.0, 1.0])])
    assert np.max(np.abs(synthesize_channels(g, p))) < 1e-14


def test_pilots_shape_determinism_power():
    S = generate_pilots(10, 5, 1)
    assert S.shape == (10, 5)
    np.testing.assert_array_equal(S, generate_pilots(10, 5, 1))
    big = generate_pilots(1000, 5, 2)
    power = np.sum(np.abs(big) ** 2, axis=0) / 1000
    assert np.all((power > 0.8) & (power < 1.2))


def _setup(seed=0, dims=(4, 4, 4), N=2, L=6):
    g = build_geometry(dims)
    H = synthesize_channels(g, sample_paths(N, 2, seed))
    return H, generate_pilots(L, N, seed + 1)


def test_noiseless_observations():
    H, S = _setup()
    obs = synthesize_observations(H, S, np.inf)
    np.testing.assert_allclose(obs.Y, np.einsum("ln,nabc->labc", S, H))
    assert obs.noise_precision == np.inf


def test_realized_snr():
    H, S = _setup()
    G = np.einsum("ln,nabc->labc", S, H)
    ratios = []
    for t in range(100):
        obs = synthesize_observations(H, S, 20.0, substream(5, t))
        W = obs.Y - G
        ratios.append(np.sum(np.abs(G) ** 2) / np.sum(np.abs(W) ** 2))
    assert abs(10 * np.log10(np.mean(ratios)) - 20.0) < 0.5


def test_zero_signal_pure_noise():
    M = 64
    G = np.zeros((2000, 4, 4, 4), dtype=complex)
    obs = add_noise(G, np.ones((2000, 1)), 0.25, 3)
    power = np.mean(np.sum(np.abs(obs.Y.reshape(2000, -1)) ** 2, axis=1))
    assert abs(power - M / obs.noise_precision) / (M * 0.25) < 0.02
    with pytest.raises(ValueError):
        synthesize_observations(np.zeros((1, 4, 4, 4)), np.ones((3, 1)), 10.0)


def test_observation_batch_is_read_only():
    H, S = _setup()
    obs = synthesize_observations(H, S, 10.0, 1)
    with pytest.raises(ValueError):
        obs.Y[0, 0, 0, 0] = 0
    with pytest.raises(ValueError):
        ObservationBatch(obs.Y.copy(), S[:3].copy(), 1.0, 0.0)


def test_substreams_independent_and_reproducible():
    a = substream(1, 0, 2).standard_normal(4)
    np.testing.assert_array_equal(a, substream(1, 0, 2).standard_normal(4))
    assert not np.allclose(a, substream(1, 1, 2).standard_normal(4))
    assert not np.allclose(a, substream(1, 0, 3).standard_normal(4))
