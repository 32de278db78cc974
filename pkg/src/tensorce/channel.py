"""Angular-model channels for a uniform cuboid array, pilots and noisy
uplink observations.

Antenna ``m`` of the flattened ``[N x M]`` channel matrix sits at grid
index ``(i1, i2, i3)`` with ``m = (i1 * I2 + i2) * I3 + i3`` (numpy C
order over the channel tensor). The same ordering is used for the
``[L x M]`` received-signal matrix.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .tensor import cpd_reconstruct

# purpose ids for per-trial random substreams
STREAM_PATHS = 0
STREAM_PILOTS = 1
STREAM_NOISE = 2
STREAM_INIT = 3


def substream(master_seed, *key):
    """Generator for the substream ``key`` of ``master_seed``.

    The stream is ``SeedSequence(master_seed, spawn_key=key)``, so e.g.
    ``substream(seed, trial, STREAM_NOISE)`` is reproducible on its own and
    independent of every other ``(trial, purpose)`` pair.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def complex_normal(rng, shape, var=1.0):
    """i.i.d. circularly-symmetric complex Gaussian samples."""
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class ArrayGeometry:
    dims: tuple
    spacing: tuple
    wavelength: float
    coords: tuple = field(repr=False)

    @property
    def n_antennas(self):
        return int(np.prod(self.dims))

    def antenna_positions(self):
        """``[M x 3]`` antenna coordinates in flattened-antenna order."""
        x, y, z = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def build_geometry(dims=(8, 8, 8), spacing=None, wavelength=1.0):
    """Uniform cuboid grid with the first antenna at the origin.

    ``spacing`` defaults to half a wavelength on every axis.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    if spacing is None:
        spacing = wavelength / 2.0
    if np.isscalar(spacing):
        spacing = (spacing,) * 3
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or min(spacing) <= 0:
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")
    coords = tuple(np.arange(I) * d for I, d in zip(dims, spacing))
    for c in coords:
        c.setflags(write=False)
    return ArrayGeometry(dims, spacing, float(wavelength), coords)


@dataclass(frozen=True)
class PathParameters:
    """Per-user path gains, elevations and azimuths (lists of 1-D arrays)."""

    gains: list
    elevation: list
    azimuth: list

    def __post_init__(self):
        if not (len(self.gains) == len(self.elevation) == len(self.azimuth)):
            raise ValueError("per-user lists must have equal length")
        for g, t, p in zip(self.gains, self.elevation, self.azimuth):
            if len(g) < 1 or not (len(g) == len(t) == len(p)):
                raise ValueError("every user needs at least one path and consistent lengths")
            if np.any(np.abs(t) > np.pi / 2 + 1e-12) or np.any(np.abs(p) > np.pi + 1e-12):
                raise ValueError("angles out of range")

    @property
    def n_users(self):
        return len(self.gains)

    @property
    def ranks(self):
        return [len(g) for g in self.gains]

    def user(self, n):
        return self.gains[n], self.elevation[n], self.azimuth[n]


def sample_paths(n_users, n_paths, rng=None):
    """Random paths: elevation U[-pi/2, pi/2], azimuth U[-pi, pi], gains
    CN(0, 1), independent across paths and users.

    ``n_paths`` may be an int or one count per user.
    """
    if n_users < 1:
        raise ValueError("need at least one user")
    counts = [int(n_paths)] * n_users if np.isscalar(n_paths) else [int(r) for r in n_paths]
    if len(counts) != n_users or min(counts) < 1:
        raise ValueError(f"invalid path counts {n_paths!r} for {n_users} users")
    rng = np.random.default_rng(rng)
    gains, elev, azim = [], [], []
    for R in counts:
        elev.append(rng.uniform(-np.pi / 2, np.pi / 2, R))
        azim.append(rng.uniform(-np.pi, np.pi, R))
        gains.append(complex_normal(rng, R))
    return PathParameters(gains, elev, azim)


class FactorSet(NamedTuple):
    """The three CPD factor matrices of one user's channel tensor."""

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray

    @property
    def rank(self):
        return self.f1.shape[1]

    def tensor(self):
        return cpd_reconstruct(self.f1, self.f2, self.f3)


def steering_factors(geom, gains, elevation, azimuth):
    """Factor matrices ``(U, V, xi^T <> P)`` of one user's channel tensor.

    ``U[i1, r] = exp(S_x[i1] u_r)`` etc. with ``u = j k sin(t) cos(f)``,
    ``v = j k sin(t) sin(f)``, ``p = j k cos(t)`` and ``k = 2 pi / lambda``.
    The gains scale the third factor's columns.
    """
    wavenum = 2.0 * np.pi / geom.wavelength
    elevation = np.asarray(elevation, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    u = wavenum * np.sin(elevation) * np.cos(azimuth)
    v = wavenum * np.sin(elevation) * np.sin(azimuth)
    p = wavenum * np.cos(elevation)
    sx, sy, sz = geom.coords
    U = np.exp(1j * np.outer(sx, u))
    V = np.exp(1j * np.outer(sy, v))
    P = np.exp(1j * np.outer(sz, p))
    return FactorSet(U, V, P * np.asarray(gains, dtype=np.complex128)[None, :])


def synthesize_channels(geom, paths):
    """One channel tensor per user, stacked into ``[N, I1, I2, I3]``."""
    out = np.empty((paths.n_users,) + geom.dims, dtype=np.complex128)
    for n in range(paths.n_users):
        out[n] = steering_factors(geom, *paths.user(n)).tensor()
    return out


def channel_matrix(channels):
    """``[N x M]`` channel matrix in flattened-antenna order."""
    channels = np.asarray(channels)
    return channels.reshape(channels.shape[0], -1)


def generate_pilots(L, N, rng=None):
    """``[L x N]`` pilot matrix with i.i.d. CN(0, 1) symbols."""
    if L < 1 or N < 1:
        raise ValueError(f"pilot length and user count must be positive, got L={L}, N={N}")
    rng = np.random.default_rng(rng)
    S = complex_normal(rng, (L, N))
    # a zero column has probability zero; resample defensively anyway
    while np.any(np.all(S == 0, axis=0)):
        S = complex_normal(rng, (L, N))
    return S


@dataclass(frozen=True)
class ObservationBatch:
    """Received tensors ``Y[l]`` of shape ``[L, I1, I2, I3]`` and the
    pilots that produced them.

    ``noise_precision`` is ``inf`` for noiseless data.
    """

    Y: np.ndarray
    pilots: np.ndarray
    noise_precision: float
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if self.Y.ndim != 4 or self.pilots.ndim != 2:
            raise ValueError("Y must be [L, I1, I2, I3] and pilots [L, N]")
        if self.Y.shape[0] != self.pilots.shape[0]:
            raise ValueError(f"{self.Y.shape[0]} tensors but {self.pilots.shape[0]} pilot rows")
        if not self.noise_precision > 0:
            raise ValueError("noise precision must be positive")
        self.Y.setflags(write=False)
        self.pilots.setflags(write=False)

    @property
    def dims(self):
        return self.Y.shape[1:]

    @property
    def n_pilots(self):
        return self.Y.shape[0]

    @property
    def n_users(self):
        return self.pilots.shape[1]

    def Y_matrix(self):
        """``[L x M]`` received signal in flattened-antenna order."""
        return self.Y.reshape(self.Y.shape[0], -1)


def noiseless_observations(channels, pilots):
    """``G[l] = sum_n s_n(l) H^n``."""
    return np.einsum("ln,nabc->labc", pilots, channels)


def synthesize_observations(channels, pilots, snr_db, rng=None, seed=0):
    """Noisy observations at a target SNR.

    The noise variance is chosen so that the expected ratio of the total
    noiseless received power ``sum_l ||G_l||^2`` to the total noise power
    equals ``10 ** (snr_db / 10)``. ``snr_db = inf`` gives noiseless data.
    """
    channels = np.asarray(channels, dtype=np.complex128)
    pilots = np.asarray(pilots, dtype=np.complex128)
    if channels.ndim != 4 or pilots.shape[1] != channels.shape[0]:
        raise ValueError(
            f"channels {channels.shape} and pilots {pilots.shape} are inconsistent"
        )
    G = noiseless_observations(channels, pilots)
    if np.isinf(snr_db) and snr_db > 0:
        return ObservationBatch(G, pilots.copy(), np.inf, float(snr_db), int(seed))
    signal = float(np.vdot(G, G).real)
    if signal == 0.0:
        raise ValueError("finite SNR is undefined for an all-zero signal; use noise_variance")
    noise_var = signal / (G.size * 10.0 ** (snr_db / 10.0))
    return add_noise(G, pilots, noise_var, rng, snr_db=snr_db, seed=seed)


def add_noise(G, pilots, noise_var, rng=None, snr_db=np.nan, seed=0):
    """Add CN(0, ``noise_var``) noise to noiseless tensors ``G``."""
    rng = np.random.default_rng(rng)
    W = complex_normal(rng, G.shape, noise_var)
    return ObservationBatch(G + W, np.asarray(pilots).copy(), 1.0 / noise_var, float(snr_db), int(seed))
