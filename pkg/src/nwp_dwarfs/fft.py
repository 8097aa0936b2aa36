"""Mixed-radix (2, 3, 5) Fourier transforms.

The direct real transform follows the normalisation used by the spectral
limited-area and global transforms::

    a_k =  (1/n) sum_j psi_j cos(2 pi j k / n)
    b_k = -(1/n) sum_j psi_j sin(2 pi j k / n)

and the inverse is ``psi_j = sum_k c_k exp(2 pi i j k / n)`` with
``c_k = a_k + i b_k`` for ``k < n/2`` and ``c_k = a_{n-k} - i b_{n-k}``
above. Only the half spectrum ``k = 0 .. n//2`` is stored.

The complex kernel is an iterative decimation-in-time Cooley-Tukey transform.
Every stage combines ``p`` interleaved sub-transforms of length ``m`` into
transforms of length ``p*m`` with an explicit radix-``p`` butterfly, so the
floating-point evaluation order is fixed for a given length.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

RADICES = (2, 3, 5)


def factorize(n: int) -> tuple[int, ...]:
    """Split ``n`` into radix-2/3/5 factors.

    Raises:
      ValueError: if ``n`` < 1 or has a prime factor other than 2, 3 or 5.
    """
    if n < 1:
        raise ValueError(f"transform length must be >= 1, got {n}")
    factors = []
    rest = n
    # radix-4 is not special-cased; 2s go last so the 5- and 3-butterflies
    # run on the shortest sub-transforms.
    for p in (5, 3, 2):
        while rest % p == 0:
            factors.append(p)
            rest //= p
    if rest != 1:
        raise ValueError(
            f"transform length {n} is not of the form 2^a 3^b 5^c "
            f"(offending factor {_smallest_prime_factor(rest)})"
        )
    return tuple(factors)


def _smallest_prime_factor(n: int) -> int:
    p = 2
    while p * p <= n:
        if n % p == 0:
            return p
        p += 1
    return n


def is_fft_length(n: int) -> bool:
    try:
        factorize(n)
    except ValueError:
        return False
    return True


def next_fft_length(n: int) -> int:
    """Smallest 2^a 3^b 5^c that is >= n."""
    n = max(int(n), 1)
    while not is_fft_length(n):
        n += 1
    return n


_LD_PI = np.longdouble("3.14159265358979323846264338327950288")


def _twiddles(p: int, m: int) -> np.ndarray:
    # exp(-2 pi i s k / (p m)) with the product s*k reduced modulo p*m
    # before it becomes an angle; evaluated in long double and rounded once
    # so forward and inverse tables carry no shared phase bias.
    length = p * m
    s = np.arange(p)[:, None]
    k = np.arange(m)[None, :]
    r = ((s * k) % length).astype(np.longdouble)
    angle = (2 * _LD_PI / length) * r
    return np.cos(angle).astype(np.float64) - 1j * np.sin(angle).astype(np.float64)


@dataclasses.dataclass(frozen=True)
class FFTPlan:
    """Immutable per-length stage table (radix and twiddle factors)."""

    n: int
    stages: tuple[tuple[int, int, np.ndarray], ...]


@functools.lru_cache(maxsize=None)
def get_plan(n: int) -> FFTPlan:
    radices = factorize(n)
    stages = []
    m = 1
    for p in radices:
        tw = _twiddles(p, m)
        tw.flags.writeable = False
        stages.append((p, m, tw))
        m *= p
    return FFTPlan(n=n, stages=tuple(stages))


_C3 = -0.5
_S3 = math.sqrt(3.0) / 2.0
_C51 = float(np.cos(2 * _LD_PI / 5))
_C52 = float(np.cos(4 * _LD_PI / 5))
_S51 = float(np.sin(2 * _LD_PI / 5))
_S52 = float(np.sin(4 * _LD_PI / 5))


def _butterfly(g: np.ndarray, p: int) -> np.ndarray:
    """p-point DFT along axis -3 of ``g`` (shape ``(..., p, P, m)``)."""
    x = [g[..., s, :, :] for s in range(p)]
    if p == 2:
        y = [x[0] + x[1], x[0] - x[1]]
    elif p == 3:
        t = x[1] + x[2]
        u = x[0] + _C3 * t
        v = -1j * _S3 * (x[1] - x[2])
        y = [x[0] + t, u + v, u - v]
    elif p == 5:
        t1 = x[1] + x[4]
        t2 = x[2] + x[3]
        t3 = x[1] - x[4]
        t4 = x[2] - x[3]
        a1 = x[0] + _C51 * t1 + _C52 * t2
        a2 = x[0] + _C52 * t1 + _C51 * t2
        b1 = 1j * (_S51 * t3 + _S52 * t4)
        b2 = 1j * (_S52 * t3 - _S51 * t4)
        y = [x[0] + t1 + t2, a1 - b1, a2 - b2, a2 + b2, a1 + b1]
    else:  # pragma: no cover - factorize() only emits 2, 3, 5
        raise ValueError(f"unsupported radix {p}")
    return np.stack(y, axis=-3)


def fft(x: np.ndarray) -> np.ndarray:
    """Unnormalised forward complex DFT along the last axis.

    ``X_k = sum_j x_j exp(-2 pi i j k / n)``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    plan = get_plan(n)
    lead = x.shape[:-1]
    # state: (..., P, m) where row j holds the length-m DFT of x[j::P]
    f = x.reshape(lead + (n, 1))
    for p, m, tw in plan.stages:
        rows = f.shape[-2] // p
        g = f.reshape(lead + (p, rows, m)) * tw[:, None, :]
        y = _butterfly(g, p)
        # y[q, j', k] is output frequency q*m + k of sub-sequence j'
        f = np.swapaxes(y, -3, -2).reshape(lead + (rows, p * m))
    return f.reshape(lead + (n,))


def ifft_unnormalized(c: np.ndarray) -> np.ndarray:
    """``x_j = sum_k c_k exp(+2 pi i j k / n)`` along the last axis."""
    c = np.asarray(c, dtype=np.complex128)
    return np.conj(fft(np.conj(c)))


@dataclasses.dataclass(frozen=True)
class FourierCoeffs:
    """Half-spectrum cosine/sine amplitudes of a real sequence of length n.

    ``a`` and ``b`` have shape ``(..., n//2 + 1)``; leading axes batch
    independent sequences.
    """

    n: int
    a: np.ndarray
    b: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return self.a + 1j * self.b

    @classmethod
    def from_complex(cls, n: int, c: np.ndarray) -> "FourierCoeffs":
        c = np.asarray(c)
        a = np.array(c.real, dtype=np.float64)
        b = np.array(c.imag, dtype=np.float64)
        b[..., 0] = 0.0
        if n % 2 == 0:
            b[..., n // 2] = 0.0
        return cls(n=n, a=a, b=b)


def dft_direct(psi: np.ndarray) -> FourierCoeffs:
    """Real-to-half-spectrum transform along the last axis (1/n scaled)."""
    psi = np.asarray(psi, dtype=np.float64)
    n = psi.shape[-1]
    full = fft(psi)
    return FourierCoeffs.from_complex(n, full[..., : n // 2 + 1] / n)


def full_spectrum(coeffs: FourierCoeffs) -> np.ndarray:
    """Expand the half spectrum to all n coefficients via the mirror rule."""
    n = coeffs.n
    half = coeffs.a + 1j * coeffs.b
    full = np.zeros(half.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = half
    k = np.arange(n // 2 + 1, n)
    full[..., k] = np.conj(half[..., n - k])
    if n % 2 == 0:
        full[..., n // 2] = coeffs.a[..., n // 2]
    return full


def dft_inverse(coeffs: FourierCoeffs) -> np.ndarray:
    """Half-spectrum to real sequence: ``psi_j = sum_k c_k e^{2 pi i jk/n}``."""
    return ifft_unnormalized(full_spectrum(coeffs)).real
