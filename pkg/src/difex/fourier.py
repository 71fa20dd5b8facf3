"""Discrete Fourier analysis: spectra, phase, amplitude, reconstructions.

`dft_naive` is the direct O(N²) evaluation of the transform definition and
acts as the correctness oracle; `fft` is the radix-2 recursion used
everywhere else, falling back to the naive path for awkward lengths.
Spectra are carried as separate real/imaginary float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Spectrum",
    "dft_naive",
    "fft",
    "fft2",
    "fft_inverse",
    "phase",
    "amplitude",
    "reconstruct_phase_only",
    "per_channel_phase",
]


@dataclass
class Spectrum:
    """Real and imaginary parts of a transform, same shape as the signal."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"re/im shapes differ: {self.re.shape} vs {self.im.shape}"
            )

    @property
    def shape(self):
        return self.re.shape


def dft_naive(signal) -> Spectrum:
    """Direct double-loop evaluation of Σ_h x(h)·e^{−j2πhu/N}.

    Quadratic on purpose; everything faster is checked against this.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dft_naive expects a non-empty 1-D signal")
    n = x.size
    re = np.zeros(n)
    im = np.zeros(n)
    for u in range(n):
        for h in range(n):
            ang = -2.0 * np.pi * h * u / n
            re[u] += x[h] * np.cos(ang)
            im[u] += x[h] * np.sin(ang)
    return Spectrum(re, im)


def _fft_c(x: np.ndarray) -> np.ndarray:
    # x is complex128 with power-of-two length
    n = x.size
    if n == 1:
        return x.copy()
    even = _fft_c(x[0::2])
    odd = _fft_c(x[1::2])
    twiddle = np.exp(-2j * np.pi * np.arange(n // 2) / n) * odd
    return np.concatenate([even + twiddle, even - twiddle])


def _naive_c(x: np.ndarray) -> np.ndarray:
    n = x.size
    u = np.arange(n)
    out = np.empty(n, dtype=np.complex128)
    for k in range(n):
        out[k] = np.sum(x * np.exp(-2j * np.pi * k * u / n))
    return out


def _forward_c(x: np.ndarray) -> np.ndarray:
    n = x.size
    if n == 0:
        raise ValueError("empty signal")
    if n & (n - 1) == 0:
        return _fft_c(x)
    return _naive_c(x)


def fft(signal) -> Spectrum:
    """Transform of a real 1-D signal; radix-2 when the length allows."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("fft expects a 1-D signal")
    c = _forward_c(x.astype(np.complex128))
    return Spectrum(c.real, c.imag)


def fft2(x) -> Spectrum:
    """2-D transform as row transforms followed by column transforms."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("fft2 expects a non-empty 2-D array")
    c = a.astype(np.complex128)
    c = np.stack([_forward_c(row) for row in c])
    c = np.stack([_forward_c(col) for col in c.T]).T
    return Spectrum(c.real, c.imag)


def _inverse_c(c: np.ndarray) -> np.ndarray:
    # inverse via the conjugation identity: F⁻¹(X) = conj(F(conj(X)))/N
    if c.ndim == 1:
        return np.conj(_forward_c(np.conj(c))) / c.size
    rows = np.stack([np.conj(_forward_c(np.conj(r))) / c.shape[1] for r in c])
    return np.stack(
        [np.conj(_forward_c(np.conj(col))) / c.shape[0] for col in rows.T]
    ).T


def fft_inverse(s: Spectrum) -> np.ndarray:
    """Inverse transform; returns the real part (inputs here are real signals)."""
    c = s.re + 1j * s.im
    if c.ndim not in (1, 2):
        raise ValueError("inverse supports 1-D and 2-D spectra")
    return _inverse_c(c).real


def phase(s: Spectrum) -> np.ndarray:
    """Full-quadrant angle of (re, im) per bin, in (−π, π]; angle(0,0) = 0.

    The two-argument form keeps the quadrant that a literal im/re ratio
    would lose, and is defined on the re = 0 axis. Bins whose magnitude is
    negligible next to the largest bin of the same spectrum (below 1e-9
    relative) are treated as dead too: after a transform round trip an
    exactly-empty bin holds rounding residue of order 1e-16 whose angle is
    arbitrary, and that angle must not masquerade as signal.
    """
    p = np.arctan2(s.im, s.re)
    # arctan2 returns [−π, π]; fold the −π edge onto +π, and pin dead bins to 0
    p = np.where(p == -np.pi, np.pi, p)
    mag = np.hypot(s.re, s.im)
    dead = mag <= 1e-9 * (mag.max() if mag.size else 0.0)
    return np.where(dead, 0.0, p)


def amplitude(s: Spectrum) -> np.ndarray:
    """Per-bin magnitude √(re² + im²)."""
    return np.hypot(s.re, s.im)


def reconstruct_phase_only(s: Spectrum) -> np.ndarray:
    """Real part of the inverse of the unit-amplitude spectrum e^{j·phase}.

    Keeps where structure sits in the signal while discarding how much
    energy each bin carries.
    """
    p = phase(s)
    return fft_inverse(Spectrum(np.cos(p), np.sin(p)))


def per_channel_phase(x) -> np.ndarray:
    """Phase of each channel's spectrum, stacked back to the input shape.

    Accepts C×N signals or C×H×W images; channels never mix.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        return np.stack([phase(fft(ch)) for ch in a])
    if a.ndim == 3:
        return np.stack([phase(fft2(ch)) for ch in a])
    raise ValueError("expected C×N or C×H×W input")
