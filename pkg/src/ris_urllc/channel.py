"""Rician channel synthesis for the direct, feed and drop links.

Each block combines a deterministic line-of-sight part built from planar-array
steering vectors (with a single Doppler phase per moving link) and a seeded
circularly-symmetric Gaussian scattered part, weighted by the K-factor and
scaled by the amplitude path loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import InvalidGeometryError, LinkGeometry

SPEED_OF_LIGHT = 299_792_458.0

# K-factor cap standing in for the pure line-of-sight limit.
KAPPA_CAP = 1e12


@dataclass(frozen=True)
class ArraySpec:
    """Planar array: element counts and spacings along the local axes."""

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("element counts must be at least 1")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("element spacings must be positive")

    @property
    def size(self) -> int:
        return self.nx * self.ny


def half_wavelength_array(nx: int, ny: int, wavelength: float) -> ArraySpec:
    d = wavelength / 2.0
    return ArraySpec(nx=nx, ny=ny, dx=d, dy=d)


@dataclass(frozen=True)
class FadingParams:
    """Large-scale and small-scale fading parameters shared by all links."""

    kappa: float                 # Rician K-factor, linear
    alpha_direct: float          # BS-user path-loss exponent
    alpha_bs_ris: float          # BS-surface path-loss exponent
    alpha_ris_user: float        # surface-user path-loss exponent
    carrier_hz: float
    pl_reference: str = "unit"   # "unit": D^-alpha; "friis": (lambda/4 pi D)^alpha

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("K-factor must be nonnegative")
        if min(self.alpha_direct, self.alpha_bs_ris, self.alpha_ris_user) <= 0:
            raise ValueError("path-loss exponents must be positive")
        if self.carrier_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.pl_reference not in ("unit", "friis"):
            raise ValueError(f"unknown path-loss reference {self.pl_reference!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True)
class ChannelSet:
    """One realization of all channel blocks.

    ``direct``: (M, N_B) rows are the BS-user channels, ``bs_ris``: (F, N_B)
    BS-to-surface matrix, ``ris_user``: (M, F) rows are the surface-user channels.
    """

    direct: np.ndarray
    bs_ris: np.ndarray
    ris_user: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.direct)) and np.all(np.isfinite(self.bs_ris))
                and np.all(np.isfinite(self.ris_user))):
            raise ValueError("non-finite channel entries")
        m, nb = self.direct.shape
        f, nb2 = self.bs_ris.shape
        m2, f2 = self.ris_user.shape
        if nb != nb2 or f != f2 or m != m2:
            raise ValueError("inconsistent channel dimensions")

    @property
    def num_users(self) -> int:
        return self.direct.shape[0]

    @property
    def num_bs_antennas(self) -> int:
        return self.direct.shape[1]

    @property
    def num_elements(self) -> int:
        return self.bs_ris.shape[0]


def upa_response(phi: float, delta: float, array: ArraySpec, wavelength: float) -> np.ndarray:
    """Steering vector of a planar array, Kronecker of the two axis responses.

    Per-axis phases grow as sin(phi)cos(delta) along x and sin(phi)sin(delta)
    along y; each axis vector is 1/sqrt(n) normalized, so the full response
    has unit norm.
    """
    kx = 2.0 * np.pi * array.dx * np.sin(phi) * np.cos(delta) / wavelength
    ky = 2.0 * np.pi * array.dy * np.sin(phi) * np.sin(delta) / wavelength
    ax = np.exp(1j * kx * np.arange(array.nx)) / np.sqrt(array.nx)
    ay = np.exp(1j * ky * np.arange(array.ny)) / np.sqrt(array.ny)
    return np.kron(ax, ay)


def path_loss(distance: float, alpha: float, wavelength: float,
              reference: str = "friis") -> float:
    """Linear power gain of a link.

    ``friis`` raises the free-space ratio to alpha: (lambda / 4 pi D)^alpha.
    ``unit`` applies the exponent to the distance only: D^-alpha (1 m
    reference with unity gain), the usual simulation shorthand.
    """
    if distance <= 0:
        raise InvalidGeometryError("path loss requires a positive distance")
    if reference == "friis":
        return float((wavelength / (4.0 * np.pi * distance)) ** alpha)
    if reference == "unit":
        return float(distance ** -alpha)
    raise ValueError(f"unknown path-loss reference {reference!r}")


def doppler_factor(speed: float, phi: float, delta: float, wavelength: float,
                   slot: float) -> complex:
    """Unit-modulus phase rotation exp(j 2 pi f_d tau) with
    f_d = speed cos(phi) cos(delta) / wavelength."""
    f_d = speed * np.cos(phi) * np.cos(delta) / wavelength
    return complex(np.exp(1j * 2.0 * np.pi * f_d * slot))


def rician_block(los: np.ndarray, pl_gain: float, kappa: float,
                 rng: np.random.Generator) -> np.ndarray:
    """K-factor mix of a deterministic part and a CN(0, 1) scattered part,
    scaled by the amplitude path loss sqrt(pl_gain)."""
    if kappa < 0:
        raise ValueError("K-factor must be nonnegative")
    kappa = min(kappa, KAPPA_CAP)
    los = np.asarray(los, dtype=complex)
    scattered = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2.0)
    mix = np.sqrt(kappa / (kappa + 1.0)) * los + np.sqrt(1.0 / (kappa + 1.0)) * scattered
    return np.sqrt(pl_gain) * mix


def los_blocks(geom: LinkGeometry, bs_array: ArraySpec, ris_array: ArraySpec,
               fading: FadingParams, speed: float, slot: float):
    """Line-of-sight parts of the three blocks (before K-factor weighting).

    The BS-surface block is the rank-one outer product of the two steering
    vectors with a common Doppler phase; the surface-user link carries no
    Doppler because the surface rides with the users.
    """
    lam = fading.wavelength
    direct = np.empty((geom.num_users, bs_array.size), dtype=complex)
    for m in range(geom.num_users):
        phi, delta = geom.bs_user_angles[m]
        direct[m] = doppler_factor(speed, phi, delta, lam, slot) * upa_response(
            phi, delta, bs_array, lam)

    phi_r, delta_r = geom.ris_bs_angles
    phi_b, delta_b = geom.bs_ris_angles
    a_r = upa_response(phi_r, delta_r, ris_array, lam)
    a_b = upa_response(phi_b, delta_b, bs_array, lam)
    bs_ris = doppler_factor(speed, phi_r, delta_r, lam, slot) * np.outer(a_r, a_b.conj())

    ris_user = np.empty((geom.num_users, ris_array.size), dtype=complex)
    for m in range(geom.num_users):
        phi, delta = geom.ris_user_angles[m]
        ris_user[m] = upa_response(phi, delta, ris_array, lam)
    return direct, bs_ris, ris_user


def synthesize(geom: LinkGeometry, bs_array: ArraySpec, ris_array: ArraySpec,
               fading: FadingParams, speed: float, slot: float,
               rng: np.random.Generator) -> ChannelSet:
    """One seeded realization of all blocks.

    Each block (and each user's vector) draws from its own child stream, so a
    fixed seed reproduces the set bitwise and resizing one block leaves the
    others' draws untouched.
    """
    m_users = geom.num_users
    los_direct, los_bs_ris, los_ris_user = los_blocks(geom, bs_array, ris_array,
                                                      fading, speed, slot)
    streams = rng.spawn(2 * m_users + 1)
    ref = fading.pl_reference
    lam = fading.wavelength

    direct = np.empty_like(los_direct)
    for m in range(m_users):
        pl = path_loss(geom.bs_user_dist[m], fading.alpha_direct, lam, ref)
        direct[m] = rician_block(los_direct[m], pl, fading.kappa, streams[m])

    pl_mid = path_loss(geom.bs_ris_dist, fading.alpha_bs_ris, lam, ref)
    bs_ris = rician_block(los_bs_ris, pl_mid, fading.kappa, streams[m_users])

    ris_user = np.empty_like(los_ris_user)
    for m in range(m_users):
        pl = path_loss(geom.ris_user_dist[m], fading.alpha_ris_user, lam, ref)
        ris_user[m] = rician_block(los_ris_user[m], pl, fading.kappa,
                                   streams[m_users + 1 + m])

    return ChannelSet(direct=direct, bs_ris=bs_ris, ris_user=ris_user)
