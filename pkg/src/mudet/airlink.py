"""Air-interface signal model.

Gray-mapped constellations, a correlated Rayleigh channel with external
interferers, pilot-based least-squares channel estimation, and sample
estimation of the interference+noise covariance.

The channel uses a Kronecker receive-side correlation model: antenna ``j``
and ``k`` are correlated by ``rho ** |j - k|``, applied to i.i.d. unit
variance complex Gaussian entries. Interferer columns are drawn the same
way and scaled by the square root of the interferer power ratio.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptySampleSetError,
    InsufficientPilotsError,
    NotPositiveDefiniteError,
)
from .numkit import as_complex_matrix, as_complex_vector, cholesky

CONSTELLATION_KINDS = ("qpsk", "qam16")

# Default diagonal loading: 1e-6 of the average diagonal power.
COV_LOADING_REL = 1e-6


def _gray_codes(n_bits: int) -> np.ndarray:
    i = np.arange(1 << n_bits)
    return i ^ (i >> 1)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy Gray-mapped constellation.

    ``points[i]`` is the complex symbol whose bit pattern is row ``i`` of
    ``bit_patterns`` (most significant bit first, so index == packed bits).
    """

    name: str
    points: np.ndarray
    bits_per_symbol: int
    bit_patterns: np.ndarray

    @property
    def size(self) -> int:
        return self.points.size

    def bits_to_indices(self, bits: np.ndarray) -> np.ndarray:
        """Pack bit groups (last axis of length ``bits_per_symbol``) to indices."""
        bits = np.asarray(bits)
        if bits.shape[-1] != self.bits_per_symbol:
            raise DimensionMismatchError(
                f"expected groups of {self.bits_per_symbol} bits, got {bits.shape[-1]}"
            )
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return bits @ weights

    def indices_to_bits(self, indices: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`bits_to_indices`; appends a bit axis."""
        return self.bit_patterns[np.asarray(indices)]

    def nearest(self, values: np.ndarray) -> np.ndarray:
        """Slice complex values to nearest-point indices (ties: lowest index)."""
        values = np.asarray(values, dtype=complex)
        d = np.abs(values[..., None] - self.points)
        return np.argmin(d, axis=-1)


def _gray_pam(n_bits: int) -> np.ndarray:
    """Amplitude levels indexed by bit pattern, Gray-mapped along the axis."""
    n = 1 << n_bits
    levels = np.arange(-(n - 1), n, 2, dtype=float)
    out = np.empty(n)
    out[_gray_codes(n_bits)] = levels
    return out


def build_constellation(kind: str) -> Constellation:
    """Build a QPSK or QAM16 constellation with unit average symbol energy.

    QAM16 uses per-axis levels ``{-3, -1, 1, 3} / sqrt(10)``; the first half
    of each symbol's bits selects the in-phase level, the second half the
    quadrature level, each axis independently Gray coded so lattice
    neighbours differ in exactly one bit.
    """
    kind = kind.lower()
    if kind not in CONSTELLATION_KINDS:
        raise ValueError(f"unsupported constellation kind: {kind!r}")
    if kind == "qpsk":
        bits_per_axis = 1
        scale = np.sqrt(2.0)
    else:
        bits_per_axis = 2
        scale = np.sqrt(10.0)
    axis = _gray_pam(bits_per_axis) / scale
    n_axis = axis.size
    bps = 2 * bits_per_axis
    idx = np.arange(n_axis * n_axis)
    i_idx = idx >> bits_per_axis
    q_idx = idx & (n_axis - 1)
    points = axis[i_idx] + 1j * axis[q_idx]
    bit_patterns = (
        (idx[:, None] >> np.arange(bps - 1, -1, -1)) & 1
    ).astype(np.uint8)
    return Constellation(
        name=kind, points=points, bits_per_symbol=bps, bit_patterns=bit_patterns
    )


@dataclass(frozen=True)
class ChannelConfig:
    """Dimensions and statistics of the synthetic uplink channel."""

    n_rx: int
    n_users: int
    n_interferers: int = 0
    rx_correlation: float = 0.0
    interferer_power_ratio: float = 1.0

    def __post_init__(self):
        if self.n_users < 1 or self.n_rx < self.n_users:
            raise ValueError("need n_rx >= n_users >= 1")
        if self.n_interferers < 0:
            raise ValueError("n_interferers must be >= 0")
        if not 0.0 <= self.rx_correlation < 1.0:
            raise ValueError("rx_correlation must be in [0, 1)")
        if self.interferer_power_ratio <= 0.0:
            raise ValueError("interferer_power_ratio must be > 0")


@dataclass(frozen=True)
class ChannelRealization:
    """One channel draw: user matrix ``h``, interferer matrix ``g``, noise power.

    ``sigma_n2 == 0`` is the noiseless limit used by exactness tests.
    """

    h: np.ndarray
    g: np.ndarray
    sigma_n2: float


@dataclass(frozen=True)
class ChannelEstimate:
    h_hat: np.ndarray
    mode: str
    error_var: float


@dataclass(frozen=True)
class CovarianceEstimate:
    """Hermitian PD interference+noise covariance with its sample count."""

    r_uu: np.ndarray
    samples: int
    loading: float


def rx_correlation_root(n_rx: int, rho: float) -> np.ndarray:
    """Lower Cholesky factor of the exponential antenna correlation matrix."""
    if rho == 0.0:
        return np.eye(n_rx)
    c = rho ** np.abs(np.subtract.outer(np.arange(n_rx), np.arange(n_rx)))
    return np.linalg.cholesky(c)


def complex_randn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channel(
    cfg: ChannelConfig, rng: np.random.Generator, sigma_n2: float
) -> ChannelRealization:
    """Draw one correlated channel realization.

    The user matrix is drawn first, then the interferer matrix, so a given
    generator state maps to exactly one realization.
    """
    if sigma_n2 < 0.0:
        raise ValueError("sigma_n2 must be >= 0")
    root = rx_correlation_root(cfg.n_rx, cfg.rx_correlation)
    h = root @ complex_randn(rng, cfg.n_rx, cfg.n_users)
    g = np.zeros((cfg.n_rx, cfg.n_interferers), dtype=complex)
    if cfg.n_interferers:
        g = np.sqrt(cfg.interferer_power_ratio) * (
            root @ complex_randn(rng, cfg.n_rx, cfg.n_interferers)
        )
    return ChannelRealization(h=h, g=g, sigma_n2=float(sigma_n2))


def apply_channel(
    real: ChannelRealization,
    x: np.ndarray,
    s_interf: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received vector ``h @ x + g @ s + n`` with fresh noise from ``rng``.

    The noise draw is consumed even at ``sigma_n2 == 0`` so generator
    consumption does not depend on the noise power.
    """
    x = as_complex_vector(x, "x")
    s_interf = np.asarray(s_interf, dtype=complex)
    n_rx, n_users = real.h.shape
    if x.size != n_users:
        raise DimensionMismatchError(f"x has {x.size} entries, channel has {n_users} users")
    if s_interf.size != real.g.shape[1]:
        raise DimensionMismatchError(
            f"s_interf has {s_interf.size} entries, channel has {real.g.shape[1]} interferers"
        )
    y = real.h @ x
    if s_interf.size:
        y = y + real.g @ s_interf
    noise = complex_randn(rng, n_rx)
    return y + np.sqrt(real.sigma_n2) * noise


def estimate_channel(
    real: ChannelRealization,
    pilot_users: np.ndarray | None,
    pilot_symbols: np.ndarray | None,
    y_pilots: np.ndarray | None,
    mode: str = "ls_pilot",
) -> ChannelEstimate:
    """Channel estimate from per-user orthogonal (time-division) pilots.

    ``pilot_users[t]`` names the single user transmitting the known symbol
    ``pilot_symbols[t]`` in slot ``t``; ``y_pilots[:, t]`` is the received
    vector. In ``ls_pilot`` mode each user's column is the least-squares
    fit over its own slots; ``error_var`` is the mean per-antenna residual
    power over all pilot slots. ``ideal`` mode returns the true channel.
    """
    if mode == "ideal":
        return ChannelEstimate(h_hat=real.h.copy(), mode="ideal", error_var=0.0)
    if mode != "ls_pilot":
        raise ValueError(f"unknown channel-estimation mode: {mode!r}")
    pilot_users = np.asarray(pilot_users)
    pilot_symbols = np.asarray(pilot_symbols, dtype=complex)
    y_pilots = as_complex_matrix(y_pilots, "y_pilots")
    n_rx, n_users = real.h.shape
    if y_pilots.shape[0] != n_rx or y_pilots.shape[1] != pilot_users.size:
        raise DimensionMismatchError("y_pilots must be n_rx x n_slots")
    h_hat = np.zeros((n_rx, n_users), dtype=complex)
    for u in range(n_users):
        slots = np.flatnonzero(pilot_users == u)
        if slots.size == 0:
            raise InsufficientPilotsError(f"user {u} has no pilot observations")
        s = pilot_symbols[slots]
        h_hat[:, u] = (y_pilots[:, slots] @ s.conj()) / np.sum(np.abs(s) ** 2)
    resid = y_pilots - h_hat[:, pilot_users] * pilot_symbols
    error_var = float(np.mean(np.abs(resid) ** 2))
    return ChannelEstimate(h_hat=h_hat, mode="ls_pilot", error_var=error_var)


def estimate_covariance(residuals, loading: float | None = None) -> CovarianceEstimate:
    """Sample interference+noise covariance with diagonal loading.

    Parameters
    ----------
    residuals : array_like, shape (n_samples, n_rx)
        Reference-signal residuals ``y - h_hat * x`` (one per row).
    loading : float or None
        Diagonal loading added after averaging. ``None`` selects
        ``COV_LOADING_REL * trace / n_rx``, which keeps the estimate
        positive definite even with fewer samples than antennas.
    """
    res = np.asarray(residuals, dtype=complex)
    if res.ndim == 1:
        res = res[None, :]
    if res.shape[0] == 0:
        raise EmptySampleSetError("no residual samples")
    t, n_rx = res.shape
    r_uu = (res.T @ res.conj()) / t
    r_uu = 0.5 * (r_uu + r_uu.conj().T)
    if loading is None:
        loading = COV_LOADING_REL * float(np.real(np.trace(r_uu))) / n_rx
    if loading < 0.0:
        raise ValueError("loading must be >= 0")
    r_uu = r_uu + loading * np.eye(n_rx)
    try:
        cholesky(r_uu)
    except NotPositiveDefiniteError:
        raise NotPositiveDefiniteError(
            "covariance not PD after loading; increase the loading or sample count"
        ) from None
    return CovarianceEstimate(r_uu=r_uu, samples=t, loading=float(loading))
