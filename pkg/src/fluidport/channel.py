"""Geometric multipath channel synthesis for a fluid-antenna receiver.

A base station carries an ``N_y x N_z`` uniform planar array in the yOz
plane; the user terminal carries a fluid antenna whose element can occupy
any port of an ``N x M`` grid spanning an aperture of ``W_y`` by ``W_z``
wavelengths.  Propagation is a clustered-delay-line style sum of one LoS
path plus NLoS paths, each carrying departure/arrival angles, delay, gain,
a random initial phase, and a Doppler frequency.

Channel coefficients are complex sums over paths of (BS steering) x
(path gain) x (port-dependent arrival phase) x (Doppler rotation).  The
per-port arrival phase factorizes over the two grid axes, so a full table
is a sum of per-path rank-1 outer products; fluidport.kernels does that
accumulation.  All functions here are pure and double precision.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import synth_tables

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class CarrierConfig:
    """Carrier frequency in Hz; wavelength is derived, never stored."""

    f_c: float

    def __post_init__(self):
        if self.f_c <= 0:
            raise ValueError(f"carrier frequency must be positive, got {self.f_c}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c


@dataclass(frozen=True)
class BsArray:
    """BS uniform planar array: element counts and spacings (meters)."""

    n_y: int
    n_z: int
    d_ty: float
    d_tz: float

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise ValueError(f"antenna counts must be >= 1, got {self.n_y}x{self.n_z}")
        if self.d_ty <= 0 or self.d_tz <= 0:
            raise ValueError("element spacings must be strictly positive")

    @property
    def n_t(self) -> int:
        return self.n_y * self.n_z


@dataclass(frozen=True)
class FluidGrid:
    """Fluid-antenna port grid.

    m ports along y, n ports along z, spacings in meters.  w_y / w_z record
    the aperture in wavelengths; under the default spacing policy
    d_ry = w_y * lambda / m and d_rz = w_z * lambda / n (see from_aperture).
    """

    m: int
    n: int
    d_ry: float
    d_rz: float
    w_y: float
    w_z: float

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"port counts must be >= 1, got n={self.n}, m={self.m}")
        if self.d_ry <= 0 or self.d_rz <= 0:
            raise ValueError("port spacings must be strictly positive")

    @classmethod
    def from_aperture(cls, w_y, w_z, m, n, carrier: CarrierConfig) -> "FluidGrid":
        lam = carrier.wavelength
        return cls(m=m, n=n, d_ry=w_y * lam / m, d_rz=w_z * lam / n, w_y=w_y, w_z=w_z)

    @property
    def n_ports(self) -> int:
        return self.n * self.m


@dataclass(frozen=True)
class PathParams:
    """One propagation path.

    Angles in radians: theta_* are elevations measured from the z axis,
    phi_* azimuths in the xy plane; tx = departure (BS), rx = arrival (UE).
    tau is the delay in seconds, alpha the nonnegative amplitude, beta the
    unit-modulus random initial phase, w the Doppler frequency in Hz.
    """

    theta_tx: float
    phi_tx: float
    theta_rx: float
    phi_rx: float
    tau: float
    alpha: float
    beta: complex
    w: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"path amplitude must be >= 0, got {self.alpha}")
        if abs(abs(self.beta) - 1.0) > 1e-12:
            raise ValueError(f"initial phase must be unit modulus, got |{self.beta}|")


@dataclass(frozen=True)
class MultipathChannel:
    """Carrier + arrays + ordered path list (index 0 is the LoS path)."""

    carrier: CarrierConfig
    bs: BsArray
    grid: FluidGrid
    paths: tuple

    def __post_init__(self):
        if len(self.paths) == 0:
            raise ValueError("a channel needs at least one path")

    @property
    def n_paths(self) -> int:
        return len(self.paths)


def steering_y(theta_tx, phi_tx, bs: BsArray, carrier: CarrierConfig) -> np.ndarray:
    """y-axis BS steering vector, length n_y; entry k has phase
    (2*pi/lambda) * sin(theta) * sin(phi) * d_ty * k."""
    k = (2.0 * np.pi / carrier.wavelength) * np.sin(theta_tx) * np.sin(phi_tx) * bs.d_ty
    return np.exp(1j * k * np.arange(bs.n_y))


def steering_z(theta_tx, bs: BsArray, carrier: CarrierConfig) -> np.ndarray:
    """z-axis BS steering vector, length n_z; entry k has phase
    (2*pi/lambda) * cos(theta) * d_tz * k."""
    k = (2.0 * np.pi / carrier.wavelength) * np.cos(theta_tx) * bs.d_tz
    return np.exp(1j * k * np.arange(bs.n_z))


def steering_3d(path: PathParams, bs: BsArray, carrier: CarrierConfig) -> np.ndarray:
    """Full UPA steering vector: Kronecker product of the y and z factors."""
    return np.kron(
        steering_y(path.theta_tx, path.phi_tx, bs, carrier),
        steering_z(path.theta_tx, bs, carrier),
    )


def steering_matrix(ch: MultipathChannel) -> np.ndarray:
    """(n_t, n_paths) matrix whose columns are the per-path steering vectors."""
    return np.stack(
        [steering_3d(p, ch.bs, ch.carrier) for p in ch.paths], axis=1
    )


def doppler_frequency(theta_rx, phi_rx, velocity, carrier: CarrierConfig) -> float:
    """Doppler shift (Hz) of a path arriving from (theta_rx, phi_rx) at a UE
    moving with the given velocity vector (m/s): (k . v) / lambda with
    arrival unit vector k = [sin*cos, sin*sin, cos]."""
    v = np.asarray(velocity, dtype=float)
    k = np.array(
        [
            np.sin(theta_rx) * np.cos(phi_rx),
            np.sin(theta_rx) * np.sin(phi_rx),
            np.cos(theta_rx),
        ]
    )
    return float(k @ v) / carrier.wavelength


def _check_port(port, grid: FluidGrid):
    n, m = port
    if not (1 <= n <= grid.n and 1 <= m <= grid.m):
        raise ValueError(
            f"port {port} outside the 1..{grid.n} x 1..{grid.m} grid (ports are 1-based)"
        )
    return int(n), int(m)


def path_gain(path: PathParams, carrier: CarrierConfig) -> complex:
    """Port-independent path coefficient alpha * beta * exp(j*2*pi*f_c*tau)."""
    return path.alpha * path.beta * np.exp(1j * 2.0 * np.pi * carrier.f_c * path.tau)


def _arrival_wavenumbers(ch: MultipathChannel):
    """Per-path arrival phase increments per port step, for both grid axes."""
    two_pi_over_lam = 2.0 * np.pi / ch.carrier.wavelength
    theta = np.array([p.theta_rx for p in ch.paths])
    phi = np.array([p.phi_rx for p in ch.paths])
    k_y = two_pi_over_lam * np.sin(theta) * np.sin(phi) * ch.grid.d_ry
    k_z = two_pi_over_lam * np.cos(theta) * ch.grid.d_rz
    return k_y, k_z


def _port_factors(ch: MultipathChannel):
    """(P, N) z-axis and (P, M) y-axis per-path port phase factors."""
    k_y, k_z = _arrival_wavenumbers(ch)
    row = np.exp(1j * np.outer(k_z, np.arange(ch.grid.n)))
    col = np.exp(1j * np.outer(k_y, np.arange(ch.grid.m)))
    return row, col


def _time_coefficients(ch: MultipathChannel, t_grid) -> np.ndarray:
    """(S, P) gains c_p * exp(j*2*pi*w_p*t) for every instant in t_grid."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    gains = np.array([path_gain(p, ch.carrier) for p in ch.paths])
    w = np.array([p.w for p in ch.paths])
    return gains[None, :] * np.exp(1j * 2.0 * np.pi * np.outer(t, w))


def path_coefficient(
    path: PathParams, port, grid: FluidGrid, t, carrier: CarrierConfig
) -> complex:
    """Coefficient of one path at one port and instant: the port-independent
    gain rotated by the arrival phase of port (n, m) and the Doppler term."""
    n, m = _check_port(port, grid)
    two_pi_over_lam = 2.0 * np.pi / carrier.wavelength
    spatial = two_pi_over_lam * (
        np.sin(path.theta_rx) * np.sin(path.phi_rx) * grid.d_ry * (m - 1)
        + np.cos(path.theta_rx) * grid.d_rz * (n - 1)
    )
    return (
        path_gain(path, carrier)
        * np.exp(1j * spatial)
        * np.exp(1j * 2.0 * np.pi * path.w * t)
    )


def channel_vector(ch: MultipathChannel, port, t) -> np.ndarray:
    """Channel between all BS antennas and the UE at port (n, m), length n_t.

    Routed through the same accumulation kernel as channel_table so that
    table entries and vector components agree bit-for-bit.
    """
    n, m = _check_port(port, ch.grid)
    row, col = _port_factors(ch)
    weights = steering_matrix(ch) * _time_coefficients(ch, t)[0][None, :]
    out = synth_tables(weights, row[:, n - 1 : n], col[:, m - 1 : m])
    return out[:, 0, 0]


def channel_table_series(ch: MultipathChannel, antenna, t_grid) -> np.ndarray:
    """(len(t_grid), N, M) channel tables for one 1-based BS antenna index."""
    if not (1 <= antenna <= ch.bs.n_t):
        raise ValueError(f"antenna index {antenna} outside 1..{ch.bs.n_t}")
    row, col = _port_factors(ch)
    a_i = steering_matrix(ch)[antenna - 1]
    weights = a_i[None, :] * _time_coefficients(ch, t_grid)
    return synth_tables(weights, row, col)


def channel_table(ch: MultipathChannel, antenna, t) -> np.ndarray:
    """N x M channel table between one BS antenna and every port, at time t."""
    return channel_table_series(ch, antenna, [t])[0]


def channel_block(ch: MultipathChannel, t_grid) -> np.ndarray:
    """(len(t_grid), n_t, N, M) tables for every instant and BS antenna."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    row, col = _port_factors(ch)
    coeffs = _time_coefficients(ch, t)  # (S, P)
    a = steering_matrix(ch)  # (n_t, P)
    weights = (coeffs[:, None, :] * a[None, :, :]).reshape(-1, ch.n_paths)
    out = synth_tables(weights, row, col)
    return out.reshape(len(t), ch.bs.n_t, ch.grid.n, ch.grid.m)


def reference_table(ch: MultipathChannel, antenna, t) -> np.ndarray:
    """N x M matrix holding the port-(1,1) channel of one antenna everywhere."""
    if not (1 <= antenna <= ch.bs.n_t):
        raise ValueError(f"antenna index {antenna} outside 1..{ch.bs.n_t}")
    h = channel_vector(ch, (1, 1), t)[antenna - 1]
    return np.full((ch.grid.n, ch.grid.m), h, dtype=np.complex128)
