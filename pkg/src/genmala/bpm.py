"""Beam-propagation forward model for optical diffraction tomography.

The refractive-index contrast image s lives on an N_x x N_z grid (row-major
slices of length N_x along the optical axis z).  A tilted incident plane
wave is pushed through the grid by alternating
  diffraction: circular convolution with a Fourier-domain kernel
              exp(j dz sqrt(k0^2 nb^2 - w^2)), evanescent branch decaying,
  refraction:  pointwise phase mask exp(j k0 dz s_k) for slice k,
then propagated a configurable distance to the detector plane and sampled
at the sensor positions.  The adjoint traverses the same DAG in reverse,
reusing the cached per-slice fields.

Frequencies follow numpy's DFT convention: w = 2*pi*fftfreq(nx, dx).
Boundary handling is circular (DFT) with an optional zero-padding factor
to push wrap-around artifacts away from the window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from genmala.exceptions import ConfigurationError, NumericalError
from genmala.operators import DifferentiableOp


@dataclass(frozen=True)
class GridSpec:
    """Computational grid: nx transverse samples, nz slices."""

    nx: int
    nz: int
    dx: float  # um
    dz: float  # um
    n_b: float  # background refractive index
    lambda0: float  # free-space wavelength, um

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ConfigurationError(f"grid dims must be positive, got {self.nx}x{self.nz}")
        if min(self.dx, self.dz, self.n_b, self.lambda0) <= 0:
            raise ConfigurationError("grid steps, n_b and wavelength must be positive")

    @property
    def k0(self) -> float:
        return 2.0 * np.pi / self.lambda0

    @property
    def num_pixels(self) -> int:
        return self.nx * self.nz


@dataclass(frozen=True)
class IncidentWave:
    """Incident field sampled one step before the grid (z = -dz)."""

    angle: float  # tilt in radians
    init_slice: np.ndarray  # complex, length nx


@dataclass(frozen=True)
class SensorSpec:
    """Detector description: extra free-space distance plus sampled positions.

    ``distance`` is the propagation length (um) from the exit plane to the
    detector plane (0 puts the sensors at the exit plane).  ``positions``
    selects transverse sample indices; None keeps all nx samples.
    """

    distance: float = 0.0
    positions: Optional[np.ndarray] = None

    def indices(self, nx: int) -> np.ndarray:
        if self.positions is None:
            return np.arange(nx)
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 1 or pos.size == 0 or pos.min() < 0 or pos.max() >= nx:
            raise ConfigurationError(f"sensor positions out of range for nx={nx}")
        return pos


@dataclass(frozen=True)
class PropagationKernel:
    """Fourier-domain diffraction kernel for one propagation step."""

    spectrum: np.ndarray  # complex, length nx


def angular_frequencies(nx: int, dx: float) -> np.ndarray:
    """Signed DFT angular frequencies 2*pi*f_j/(nx*dx)."""
    return 2.0 * np.pi * np.fft.fftfreq(nx, d=dx)


def make_kernel(grid: GridSpec, distance: Optional[float] = None,
                nx: Optional[int] = None) -> PropagationKernel:
    """Diffraction kernel spectrum exp(j d sqrt(k0^2 nb^2 - w^2)).

    The square root takes the principal branch, so evanescent components
    (w^2 > k0^2 nb^2) pick up a positive imaginary part and decay.
    ``distance`` defaults to one slice step dz; ``nx`` allows building the
    kernel on a padded grid.
    """
    d = grid.dz if distance is None else distance
    n = grid.nx if nx is None else nx
    w = angular_frequencies(n, grid.dx)
    kz = np.sqrt(((grid.k0 * grid.n_b) ** 2 - w ** 2).astype(np.complex128))
    return PropagationKernel(spectrum=np.exp(1j * d * kz))


def make_plane_wave(grid: GridSpec, angle: float, amplitude: float = 1.0) -> IncidentWave:
    """Unit-amplitude tilted plane wave sampled at z = -dz.

    The wave vector has magnitude k0*n_b; ``angle`` tilts it in the x-z
    plane (angle 0 propagates straight down the z axis).
    """
    kx = grid.k0 * grid.n_b * np.sin(angle)
    kz = grid.k0 * grid.n_b * np.cos(angle)
    x = np.arange(grid.nx) * grid.dx
    phase = kx * x - kz * grid.dz
    return IncidentWave(angle=angle, init_slice=amplitude * np.exp(1j * phase))


def uniform_angles(q: int, theta: float) -> np.ndarray:
    """Q illumination angles uniformly spaced in [-theta, theta]."""
    if q < 1:
        raise ConfigurationError(f"need at least one incident wave, got {q}")
    if q == 1:
        return np.array([0.0])
    return np.linspace(-theta, theta, q)


class _Workspace:
    """Padded-grid quantities shared by forward and adjoint passes."""

    def __init__(self, grid: GridSpec, sensor: SensorSpec, pad_factor: int):
        if pad_factor < 1:
            raise ConfigurationError(f"pad_factor must be >= 1, got {pad_factor}")
        self.grid = grid
        self.sensor = sensor
        self.n = grid.nx * pad_factor
        self.kernel = make_kernel(grid, nx=self.n).spectrum
        self.detector_kernel = (
            make_kernel(grid, distance=sensor.distance, nx=self.n).spectrum
            if sensor.distance != 0.0
            else None
        )
        self.indices = sensor.indices(grid.nx)

    def embed(self, slice_field: np.ndarray) -> np.ndarray:
        if self.n == self.grid.nx:
            return np.asarray(slice_field, dtype=np.complex128)
        out = np.zeros(self.n, dtype=np.complex128)
        out[: self.grid.nx] = slice_field
        return out

    def diffract(self, u: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.fft(u) * self.kernel)

    def diffract_adj(self, w: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.fft(w) * self.kernel.conj())

    def to_detector(self, u: np.ndarray) -> np.ndarray:
        if self.detector_kernel is not None:
            u = np.fft.ifft(np.fft.fft(u) * self.detector_kernel)
        return u[: self.grid.nx][self.indices]

    def from_detector(self, r: np.ndarray) -> np.ndarray:
        w = np.zeros(self.n, dtype=np.complex128)
        w[self.indices] = r
        if self.detector_kernel is not None:
            w = np.fft.ifft(np.fft.fft(w) * self.detector_kernel.conj())
        return w


def _slices(grid: GridSpec, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (grid.num_pixels,):
        raise ConfigurationError(
            f"contrast image has length {s.shape}, grid wants {grid.num_pixels}"
        )
    return s.reshape(grid.nz, grid.nx)


def _propagate(grid: GridSpec, wave: IncidentWave, s: np.ndarray,
               ws: _Workspace, keep_fields: bool):
    """Run the diffraction/refraction ladder; optionally cache all fields.

    Returns the exit field, the cached per-slice fields (or None) and the
    refraction masks on the padded grid (contrast is zero outside the
    window, so the mask is 1 there).
    """
    s_k = _slices(grid, s)
    phase = np.ones((grid.nz, ws.n), dtype=np.complex128)
    phase[:, : grid.nx] = np.exp(1j * grid.k0 * grid.dz * s_k)  # |.| = 1
    u = ws.embed(wave.init_slice)
    fields = [] if keep_fields else None
    for k in range(grid.nz):
        u = ws.diffract(u) * phase[k]
        if not np.all(np.isfinite(u)):
            raise NumericalError(f"non-finite field after slice {k}")
        if keep_fields:
            fields.append(u)
    return u, fields, phase


def bpm_forward(grid: GridSpec, wave: IncidentWave, s: np.ndarray,
                sensor: SensorSpec = SensorSpec(), pad_factor: int = 1) -> np.ndarray:
    """Complex field at the sensor positions for one incident wave."""
    ws = _Workspace(grid, sensor, pad_factor)
    u, _, _ = _propagate(grid, wave, s, ws, keep_fields=False)
    return ws.to_detector(u)


def bpm_slice_fields(grid: GridSpec, wave: IncidentWave, s: np.ndarray,
                     pad_factor: int = 1) -> np.ndarray:
    """All intermediate slice fields u_0 .. u_{Nz-1} as an (nz, n) array."""
    ws = _Workspace(grid, SensorSpec(), pad_factor)
    _, fields, _ = _propagate(grid, wave, s, ws, keep_fields=True)
    return np.stack(fields)


def bpm_vjp(grid: GridSpec, wave: IncidentWave, s: np.ndarray, r: np.ndarray,
            sensor: SensorSpec = SensorSpec(), pad_factor: int = 1) -> np.ndarray:
    """Re(J^H r) with respect to the contrast image s.

    Reverse traversal of the forward ladder with cached slice fields: at
    slice k the refraction mask contributes Re(conj(j k0 dz u_k) * w_k)
    where w_k is the cotangent carried on u_k, and the diffraction adjoint
    is a convolution with the conjugated kernel spectrum.
    """
    ws = _Workspace(grid, sensor, pad_factor)
    r = np.asarray(r, dtype=np.complex128)
    if r.shape != (ws.indices.size,):
        raise ConfigurationError(
            f"cotangent length {r.shape} does not match sensor count {ws.indices.size}"
        )
    _, fields, phase = _propagate(grid, wave, s, ws, keep_fields=True)

    grad = np.zeros((grid.nz, grid.nx), dtype=np.float64)
    w = ws.from_detector(r)
    c = 1j * grid.k0 * grid.dz
    for k in range(grid.nz - 1, -1, -1):
        grad[k] = np.real(np.conj(c * fields[k]) * w)[: grid.nx]
        # cotangent through the refraction mask, then the diffraction step
        w = ws.diffract_adj(w * np.conj(phase[k]))
    return grad.reshape(-1)


def _map_waves(task, q_total: int, threads: int) -> list:
    """Evaluate task(q) for every wave index, ordered by q.

    Threaded and sequential execution produce identical outputs because
    results are collected in wave order regardless of scheduling.
    """
    if q_total < 1:
        raise ConfigurationError("need at least one incident wave")
    if threads > 1 and q_total > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(task, range(q_total)))
    return [task(q) for q in range(q_total)]


def bpm_multi_forward(grid: GridSpec, waves: Sequence[IncidentWave], s: np.ndarray,
                      sensor: SensorSpec = SensorSpec(), pad_factor: int = 1,
                      threads: int = 1) -> np.ndarray:
    """Stacked measurements [y_1, ..., y_Q] over all incident waves."""
    blocks = _map_waves(
        lambda q: bpm_forward(grid, waves[q], s, sensor, pad_factor),
        len(waves), threads,
    )
    return np.concatenate(blocks)


def bpm_multi_vjp(grid: GridSpec, waves: Sequence[IncidentWave], s: np.ndarray,
                  r: np.ndarray, sensor: SensorSpec = SensorSpec(),
                  pad_factor: int = 1, threads: int = 1) -> np.ndarray:
    """Sum of per-wave adjoints for a stacked cotangent."""
    m_per = sensor.indices(grid.nx).size
    r = np.asarray(r, dtype=np.complex128)
    if r.shape != (m_per * len(waves),):
        raise ConfigurationError(
            f"stacked cotangent length {r.shape} does not match Q*M'={m_per * len(waves)}"
        )
    parts = _map_waves(
        lambda q: bpm_vjp(grid, waves[q], s, r[q * m_per:(q + 1) * m_per],
                          sensor, pad_factor),
        len(waves), threads,
    )
    return np.sum(parts, axis=0)


def bpm_operator(grid: GridSpec, waves: Sequence[IncidentWave],
                 sensor: SensorSpec = SensorSpec(), pad_factor: int = 1,
                 threads: int = 1) -> DifferentiableOp:
    """Wrap the multi-illumination model as a DifferentiableOp."""
    m_per = sensor.indices(grid.nx).size
    return DifferentiableOp(
        in_dim=grid.num_pixels,
        out_dim=m_per * len(waves),
        out_kind="complex",
        forward=lambda s: bpm_multi_forward(grid, waves, s, sensor, pad_factor, threads),
        vjp=lambda s, r: bpm_multi_vjp(grid, waves, s, r, sensor, pad_factor, threads),
        sample_domain=lambda rng: 0.05 * rng.standard_normal(grid.num_pixels),
    )
