"""Dense-grid and spectral primitives.

Feature maps are plain ``float`` arrays of shape ``(H, W, C)``; attention maps
are ``(H, W)``. Everything here accumulates in float64.
"""
import numpy as np

from .errors import DimensionError, EvaluationError, SizingError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def as_feature_map(v, name="feature map"):
    v = np.asarray(v)
    if v.ndim != 3:
        raise DimensionError(f"{name} must be (H, W, C), got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DimensionError(f"{name} contains non-finite values")
    return v


def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(signal, inverse=False):
    """Radix-2 Cooley-Tukey transform along the last axis.

    The inverse is scaled by ``1/n`` so that ``fft(fft(x), inverse=True) == x``.
    """
    a = np.asarray(signal, dtype=np.complex128)
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise SizingError(f"FFT length must be a power of two, got {n}")
    a = a[..., _bit_reversal(n)]
    sign = 1.0 if inverse else -1.0
    lead = a.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    if inverse:
        a = a / n
    return a


def ifft(signal):
    return fft(signal, inverse=True)


def circular_convolve(a, b):
    """``out[k] = sum_j a[j] * b[(k - j) mod n]`` through the FFT path.

    Broadcasts over leading axes; the last axes must match.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return ifft(fft(a) * fft(b)).real


def global_avg_pool(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] * v.shape[1] == 0:
        raise DimensionError(f"cannot pool a map of shape {v.shape}")
    return v.mean(axis=(0, 1))


def finite_difference_grad(fn, point, eps=1e-6):
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        g[i] = (hi - lo) / (2 * eps)
    return grad


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
