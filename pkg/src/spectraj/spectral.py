"""Amplitude/phase spectrums of coordinate sequences.

Convention: unnormalized forward transform ``X_k = sum_n x_n exp(-2j pi k n / N)``
and ``1/N`` on the inverse. Phases live in ``(-pi, pi]`` and are forced to 0
on bins whose amplitude is below ``PHASE_EPS``. The full (redundant) length-N
spectrum is kept.

Numpy functions serve data preparation and evaluation; the ``torch_*``
variants are differentiable and are used inside the networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .errors import ConfigError, NumericError

PHASE_EPS = 1e-12
IMAG_TOL = 1e-6


@dataclass(frozen=True)
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        if self.amplitude.shape != self.phase.shape or self.amplitude.ndim != 1:
            raise ValueError("amplitude and phase must be 1-D arrays of equal length")

    @property
    def length(self) -> int:
        return self.amplitude.shape[0]


@dataclass(frozen=True)
class TrajectorySpectrum:
    x_axis: Spectrum
    y_axis: Spectrum

    def __post_init__(self):
        if self.x_axis.length != self.y_axis.length:
            raise ValueError("axis spectrums differ in length")

    @property
    def length(self) -> int:
        return self.x_axis.length

    def as_array(self) -> np.ndarray:
        """``(N, 4)`` rows of ``[a_x, a_y, phi_x, phi_y]``."""
        return np.stack(
            [self.x_axis.amplitude, self.y_axis.amplitude, self.x_axis.phase, self.y_axis.phase], axis=-1
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "TrajectorySpectrum":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(Spectrum(arr[:, 0], arr[:, 2]), Spectrum(arr[:, 1], arr[:, 3]))


@dataclass(frozen=True)
class KeypointSchedule:
    """Future steps (1-indexed, counted from the end of the observation)."""

    key_steps: tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.key_steps)
        object.__setattr__(self, "key_steps", steps)
        if not steps:
            raise ConfigError("keypoint schedule is empty")
        if steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError(f"keypoint steps must be positive and strictly increasing: {steps}")

    def __len__(self) -> int:
        return len(self.key_steps)

    def validate(self, t_f: int) -> None:
        if self.key_steps[-1] != t_f:
            raise ConfigError(f"keypoint schedule {self.key_steps} must end at t_f={t_f}")

    @classmethod
    def uniform(cls, n_key: int, t_f: int) -> "KeypointSchedule":
        """``n_key`` evenly spaced steps ending at ``t_f`` ({4, 8, 12} for 3 of 12)."""
        if not 1 <= n_key <= t_f:
            raise ConfigError(f"need 1 <= N_key <= t_f, got N_key={n_key}, t_f={t_f}")
        return cls(tuple(round(t_f * (i + 1) / n_key) for i in range(n_key)))


def _wrap_phase(phase: np.ndarray, amplitude: np.ndarray) -> np.ndarray:
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return np.where(amplitude < PHASE_EPS, 0.0, phase)


def dft(sequence) -> Spectrum:
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dft expects a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise NumericError("dft input contains non-finite values")
    coeffs = np.fft.fft(x)
    amplitude = np.abs(coeffs)
    return Spectrum(amplitude, _wrap_phase(np.angle(coeffs), amplitude))


def idft(spectrum: Spectrum, *, check_imag: bool = False) -> np.ndarray:
    coeffs = spectrum.amplitude * np.exp(1j * spectrum.phase)
    values = np.fft.ifft(coeffs)
    if check_imag:
        scale = max(float(np.max(np.abs(values.real), initial=0.0)), 1e-300)
        residue = float(np.max(np.abs(values.imag), initial=0.0))
        if residue > IMAG_TOL * scale:
            raise NumericError(f"inverse transform has imaginary residue {residue:.3g}")
    return values.real


def trajectory_to_spectrum(traj) -> TrajectorySpectrum:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2:
        raise ValueError(f"expected a (T, 2) trajectory, got shape {traj.shape}")
    return TrajectorySpectrum(dft(traj[:, 0]), dft(traj[:, 1]))


def spectrum_to_trajectory(spec: TrajectorySpectrum) -> np.ndarray:
    return np.stack([idft(spec.x_axis), idft(spec.y_axis)], axis=-1)


def trajectory_spectrum_array(traj) -> np.ndarray:
    """``(T, 4)`` spectrum rows ``[a_x, a_y, phi_x, phi_y]`` of a ``(T, 2)`` trajectory."""
    return trajectory_to_spectrum(traj).as_array()


def spectrum_array_to_trajectory(arr) -> np.ndarray:
    return spectrum_to_trajectory(TrajectorySpectrum.from_array(arr))


def extract_keypoints(future, schedule: KeypointSchedule) -> np.ndarray:
    future = np.asarray(future)
    t_f = future.shape[0]
    if schedule.key_steps[-1] > t_f:
        raise ConfigError(f"keypoint schedule {schedule.key_steps} exceeds t_f={t_f}")
    return future[[s - 1 for s in schedule.key_steps]]


def linear_interpolate(last_observed, keypoints, schedule: KeypointSchedule, t_f: int) -> np.ndarray:
    """Piecewise-linear path from ``last_observed`` (step 0) through each keypoint.

    Step ``s`` in segment ``[t0, t1]`` is ``p0 + (p1 - p0) * ((s - t0) / (t1 - t0))``.
    """
    keypoints = np.asarray(keypoints, dtype=np.float64)
    if schedule.key_steps[-1] < t_f:
        raise ConfigError(f"keypoint schedule {schedule.key_steps} does not reach t_f={t_f}")
    knots_t = np.array((0,) + schedule.key_steps, dtype=np.float64)
    knots = np.vstack([np.asarray(last_observed, dtype=np.float64)[None], keypoints])
    steps = np.arange(1, t_f + 1, dtype=np.float64)
    seg = np.searchsorted(knots_t, steps, side="left") - 1  # knots_t[seg] < s <= knots_t[seg + 1]
    t0, t1 = knots_t[seg], knots_t[seg + 1]
    frac = ((steps - t0) / (t1 - t0))[:, None]
    p0, p1 = knots[seg], knots[seg + 1]
    out = p0 + (p1 - p0) * frac
    # exact at the knots regardless of rounding
    out[[s - 1 for s in schedule.key_steps]] = keypoints
    return out


# --------------------------------------------------------------------------
# differentiable counterparts


@lru_cache(maxsize=64)
def _basis(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n)
    angle = 2.0 * np.pi * np.outer(k, k) / n
    return np.cos(angle), np.sin(angle)


def torch_idft(spectrum: torch.Tensor) -> torch.Tensor:
    """Inverse transform of ``(..., N, 4)`` spectrum rows to ``(..., N, 2)`` points.

    ``x_n = 1/N sum_k a_k cos(phi_k + 2 pi k n / N)``, the real part of the
    complex inverse. Works for any real amplitude sign.
    """
    n = spectrum.shape[-2]
    cos_b, sin_b = (torch.as_tensor(b, dtype=spectrum.dtype, device=spectrum.device) for b in _basis(n))
    amp = spectrum[..., 0:2]
    phase = spectrum[..., 2:4]
    re = amp * torch.cos(phase)
    im = amp * torch.sin(phase)
    # basis is symmetric: [n, k]
    return (cos_b @ re - sin_b @ im) / n


def torch_dft(points: torch.Tensor) -> torch.Tensor:
    """``(..., N, 2)`` points to ``(..., N, 4)`` spectrum rows (same conventions as :func:`dft`)."""
    coeffs = torch.fft.fft(points, dim=-2)
    amp = coeffs.abs()
    phase = torch.angle(coeffs)
    phase = torch.where(phase <= -math.pi, torch.full_like(phase, math.pi), phase)
    phase = torch.where(amp < PHASE_EPS, torch.zeros_like(phase), phase)
    return torch.cat([amp, phase], dim=-1)
