import numpy as np
import pytest

from mudet.airlink import (
    ChannelConfig,
    build_constellation,
    complex_randn,
    estimate_channel,
    estimate_covariance,
    generate_channel,
    apply_channel,
)
from mudet.errors import (
    DimensionMismatchError,
    EmptySampleSetError,
    InsufficientPilotsError,
)
from mudet.numkit import cholesky

from conftest import crandn


# --- constellations ----------------------------------------------------------


def test_qpsk_definition(qpsk):
    assert qpsk.bits_per_symbol == 2
    assert np.allclose(sorted(np.abs(qpsk.points)), np.ones(4))
    assert abs(np.mean(np.abs(qpsk.points) ** 2) - 1.0) < 1e-12


def test_qam16_unit_energy(qam16):
    assert qam16.bits_per_symbol == 4
    assert abs(np.mean(np.abs(qam16.points) ** 2) - 1.0) < 1e-12
    levels = sorted(set(np.round(qam16.points.real, 12)))
    assert np.allclose(levels, np.array([-3, -1, 1, 3]) / np.sqrt(10))


@pytest.mark.parametrize("kind", ["qpsk", "qam16"])
def test_gray_adjacency_exhaustive(kind):
    cons = build_constellation(kind)
    pts = cons.points
    spacing = np.min(np.abs(pts[0] - np.delete(pts, 0)))
    n_adjacent = 0
    for i in range(cons.size):
        for j in range(i + 1, cons.size):
            if abs(abs(pts[i] - pts[j]) - spacing) < 1e-9:
                assert int(np.sum(cons.bit_patterns[i] != cons.bit_patterns[j])) == 1
                n_adjacent += 1
    assert n_adjacent == (4 if kind == "qpsk" else 24)


def test_bit_symbol_roundtrip(qam16):
    idx = np.arange(qam16.size)
    assert np.array_equal(qam16.bits_to_indices(qam16.indices_to_bits(idx)), idx)
    assert np.array_equal(qam16.nearest(qam16.points), idx)


def test_unsupported_kind():
    with pytest.raises(ValueError):
        build_constellation("qam64")


# --- channel generation -------------------------------------------------------


def test_channel_determinism():
    cfg = ChannelConfig(n_rx=8, n_users=4, n_interferers=2, rx_correlation=0.7)
    a = generate_channel(cfg, np.random.default_rng(9), 0.3)
    b = generate_channel(cfg, np.random.default_rng(9), 0.3)
    assert np.array_equal(a.h, b.h) and np.array_equal(a.g, b.g)


def test_channel_uncorrelated_covariance():
    cfg = ChannelConfig(n_rx=8, n_users=2, rx_correlation=0.0)
    rng = np.random.default_rng(1)
    cols = np.stack([generate_channel(cfg, rng, 0.1).h[:, 0] for _ in range(10000)])
    cov = (cols[:, :, None] * cols[:, None, :].conj()).mean(axis=0)
    assert np.linalg.norm(cov - np.eye(8)) <= 0.05 * np.linalg.norm(np.eye(8))


def test_channel_correlated_covariance_matches_model():
    rho = 0.9
    cfg = ChannelConfig(n_rx=8, n_users=2, rx_correlation=rho)
    c = rho ** np.abs(np.subtract.outer(np.arange(8), np.arange(8)))
    cholesky(c)  # PD
    rng = np.random.default_rng(2)
    cols = np.stack([generate_channel(cfg, rng, 0.1).h[:, 0] for _ in range(10000)])
    cov = (cols[:, :, None] * cols[:, None, :].conj()).mean(axis=0)
    assert np.linalg.norm(cov - c) <= 0.05 * np.linalg.norm(c)


def test_interferer_power_scaling():
    cfg = ChannelConfig(n_rx=6, n_users=2, n_interferers=3, interferer_power_ratio=4.0)
    rng = np.random.default_rng(3)
    pwr = np.mean(
        [np.mean(np.abs(generate_channel(cfg, rng, 0.1).g) ** 2) for _ in range(2000)]
    )
    assert abs(pwr - 4.0) < 0.2


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(n_rx=2, n_users=4)
    with pytest.raises(ValueError):
        ChannelConfig(n_rx=4, n_users=2, rx_correlation=1.0)


# --- transmission --------------------------------------------------------------


def test_apply_channel_identity_noiseless():
    cfg = ChannelConfig(n_rx=3, n_users=3)
    real = generate_channel(cfg, np.random.default_rng(0), 0.0)
    real = type(real)(h=np.eye(3, dtype=complex), g=real.g, sigma_n2=0.0)
    x = np.array([1 + 1j, -1 + 0j, 0.5j])
    y = apply_channel(real, x, np.zeros(0), np.random.default_rng(1))
    assert np.allclose(y, x)


def test_apply_channel_noise_variance():
    cfg = ChannelConfig(n_rx=4, n_users=1)
    real = generate_channel(cfg, np.random.default_rng(5), 0.25)
    rng = np.random.default_rng(6)
    samples = np.stack(
        [apply_channel(real, np.zeros(1), np.zeros(0), rng) for _ in range(10000)]
    )
    assert abs(np.mean(np.abs(samples) ** 2) - 0.25) < 0.25 * 0.05


def test_apply_channel_recomputation_oracle():
    cfg = ChannelConfig(n_rx=5, n_users=2, n_interferers=1)
    real = generate_channel(cfg, np.random.default_rng(7), 0.4)
    rng = np.random.default_rng(8)
    x = crandn(np.random.default_rng(9), 2)
    s = crandn(np.random.default_rng(10), 1)
    y = apply_channel(real, x, s, rng)
    # replay the same noise draw with a cloned generator
    noise = complex_randn(np.random.default_rng(8), 5)
    expected = real.h @ x + real.g @ s + np.sqrt(0.4) * noise
    assert np.allclose(y, expected)


def test_apply_channel_dimension_mismatch():
    cfg = ChannelConfig(n_rx=4, n_users=2)
    real = generate_channel(cfg, np.random.default_rng(0), 0.1)
    with pytest.raises(DimensionMismatchError):
        apply_channel(real, np.zeros(3), np.zeros(0), np.random.default_rng(1))


# --- channel estimation ---------------------------------------------------------


def _pilot_block(real, pilots_per_user, rng):
    n_users = real.h.shape[1]
    n_slots = pilots_per_user * n_users
    users = np.arange(n_slots) % n_users
    symbols = np.exp(2j * np.pi * rng.integers(0, 4, n_slots) / 4)
    y = real.h[:, users] * symbols
    y = y + np.sqrt(real.sigma_n2) * complex_randn(rng, real.h.shape[0], n_slots)
    return users, symbols, y


def test_estimate_channel_ideal():
    cfg = ChannelConfig(n_rx=6, n_users=3)
    real = generate_channel(cfg, np.random.default_rng(0), 0.2)
    est = estimate_channel(real, None, None, None, mode="ideal")
    assert np.array_equal(est.h_hat, real.h) and est.error_var == 0.0


def test_estimate_channel_noiseless_ls_exact():
    cfg = ChannelConfig(n_rx=6, n_users=3)
    real = generate_channel(cfg, np.random.default_rng(1), 0.0)
    users, symbols, y = _pilot_block(real, 3, np.random.default_rng(2))
    est = estimate_channel(real, users, symbols, y, mode="ls_pilot")
    assert np.linalg.norm(est.h_hat - real.h) < 1e-10


def test_estimate_channel_error_variance_scaling():
    # LS error variance per entry should track sigma_n2 / pilot_count
    sigma_n2 = 0.1
    cfg = ChannelConfig(n_rx=4, n_users=2)
    for pilots in (2, 8):
        rng = np.random.default_rng(100 + pilots)
        errs = []
        for _ in range(4000):
            real = generate_channel(cfg, rng, sigma_n2)
            users, symbols, y = _pilot_block(real, pilots, rng)
            est = estimate_channel(real, users, symbols, y, mode="ls_pilot")
            errs.append(np.mean(np.abs(est.h_hat - real.h) ** 2))
        measured = float(np.mean(errs))
        assert abs(measured - sigma_n2 / pilots) <= 0.1 * sigma_n2 / pilots


def test_estimate_channel_insufficient_pilots():
    cfg = ChannelConfig(n_rx=4, n_users=3)
    real = generate_channel(cfg, np.random.default_rng(3), 0.1)
    users = np.array([0, 1, 0, 1])  # user 2 never sounds
    symbols = np.ones(4, dtype=complex)
    y = real.h[:, users] * symbols
    with pytest.raises(InsufficientPilotsError):
        estimate_channel(real, users, symbols, y, mode="ls_pilot")


# --- covariance estimation -------------------------------------------------------


def test_covariance_loading_only():
    est = estimate_covariance(np.zeros((5, 3)), loading=1e-3)
    assert np.allclose(est.r_uu, 1e-3 * np.eye(3))
    assert est.samples == 5 and est.loading == 1e-3


def test_covariance_diagonal_truth():
    rng = np.random.default_rng(4)
    scale = np.sqrt(np.array([0.5, 1.0, 1.5]))
    res = scale * crandn(rng, 100000, 3) * np.sqrt(2)
    est = estimate_covariance(res)
    truth = np.diag([1.0, 2.0, 3.0])
    assert np.all(np.abs(est.r_uu - truth) <= 0.05 * np.max(np.abs(truth)) + 0.05)
    assert np.allclose(np.diag(est.r_uu).real, [1, 2, 3], rtol=0.05)


def test_covariance_rank_one_structure():
    rng = np.random.default_rng(5)
    g = crandn(rng, 6, 1)
    sigma2 = 0.2
    s = np.exp(2j * np.pi * rng.random(100000))
    res = (g @ s[None, :]).T + np.sqrt(sigma2) * crandn(rng, 100000, 6)
    est = estimate_covariance(res)
    truth = g @ g.conj().T + sigma2 * np.eye(6)
    assert np.linalg.norm(est.r_uu - truth) <= 0.05 * np.linalg.norm(truth)


def test_covariance_hermitian_pd_always():
    rng = np.random.default_rng(6)
    res = crandn(rng, 4, 8)  # fewer samples than antennas
    est = estimate_covariance(res)
    assert np.linalg.norm(est.r_uu - est.r_uu.conj().T) <= 1e-12
    cholesky(est.r_uu)


def test_covariance_empty_raises():
    with pytest.raises(EmptySampleSetError):
        estimate_covariance(np.zeros((0, 4)))
