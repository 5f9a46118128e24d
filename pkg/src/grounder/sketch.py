"""Count Sketch, compact bilinear pooling and the 1x1 attention head."""
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .errors import ConfigurationError, DimensionError, SizingError
from .numerics import as_feature_map, circular_convolve, is_power_of_two

DEFAULT_SKETCH_DIM = 256
DEFAULT_HIDDEN = (64, 64)
_OPEN_EPS = 1e-12


@dataclass(frozen=True)
class SketchParams:
    input_dim: int
    sketch_dim: int
    bucket: np.ndarray
    sign: np.ndarray
    seed: int

    def matrix(self):
        """Dense ``(input_dim, sketch_dim)`` projection with one signed entry per row."""
        m = np.zeros((self.input_dim, self.sketch_dim))
        m[np.arange(self.input_dim), self.bucket] = self.sign
        return m


def make_sketch_params(seed, input_dim, sketch_dim):
    if not is_power_of_two(sketch_dim):
        raise SizingError(f"sketch_dim must be a power of two, got {sketch_dim}")
    if input_dim < 1:
        raise SizingError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    bucket = rng.integers(0, sketch_dim, size=input_dim)
    sign = rng.integers(0, 2, size=input_dim) * 2.0 - 1.0
    bucket.setflags(write=False)
    sign.setflags(write=False)
    return SketchParams(int(input_dim), int(sketch_dim), bucket, sign, int(seed))


def count_sketch(x, p):
    """``out[b] = sum of sign[i] * x[i] over i hashed to b``; works on rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.input_dim:
        raise DimensionError(f"expected {p.input_dim} features, got {x.shape[-1]}")
    out = np.zeros(x.shape[:-1] + (p.sketch_dim,))
    for i in range(p.input_dim):
        out[..., p.bucket[i]] += p.sign[i] * x[..., i]
    return out


def mcb_pool(t, v, pt, pv, normalize=True):
    """Compact bilinear pooling of a word vector with every pixel of ``v``.

    Each pixel gets ``ifft(fft(sketch(t)) * fft(sketch(v[h, w])))``; with
    ``normalize`` a signed square root and per-pixel L2 normalization follow.
    """
    if pt.sketch_dim != pv.sketch_dim:
        raise ConfigurationError(f"sketch dims differ: {pt.sketch_dim} vs {pv.sketch_dim}")
    v = as_feature_map(v)
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (pt.input_dim,):
        raise DimensionError(f"text feature has shape {t.shape}, expected ({pt.input_dim},)")
    if v.shape[2] != pv.input_dim:
        raise DimensionError(f"map has {v.shape[2]} channels, expected {pv.input_dim}")
    phi = circular_convolve(count_sketch(t, pt), count_sketch(v, pv))
    if normalize:
        phi = signed_sqrt_l2(phi)
    return phi


def signed_sqrt_l2(phi):
    phi = np.sign(phi) * np.sqrt(np.abs(phi))
    norm = np.linalg.norm(phi, axis=-1, keepdims=True)
    return np.where(norm > 1e-12, phi / np.maximum(norm, 1e-12), 0.0)


@dataclass
class AttentionHeadParams:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("attention head needs at least one layer")
        L.check_chain(self.layers)
        last = self.layers[-1]
        if last.activation != "sigmoid" or last.out_dim != 1:
            raise ConfigurationError("final head layer must be a 1-channel sigmoid")

    @property
    def in_dim(self):
        return self.layers[0].in_dim


def init_attention_head(rng, sketch_dim=DEFAULT_SKETCH_DIM, hidden=DEFAULT_HIDDEN):
    dims = [sketch_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    return AttentionHeadParams(L.init_stack(rng, dims, acts))


def attention_head(phi, params):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 3 or phi.shape[2] != params.in_dim:
        raise DimensionError(f"head expects {params.in_dim} channels, got shape {phi.shape}")
    h, w, c = phi.shape
    r = L.forward(params.layers, phi.reshape(h * w, c)).reshape(h, w)
    # float64 sigmoid rounds to exactly 0 or 1 far from the origin
    return np.clip(r, _OPEN_EPS, 1.0 - _OPEN_EPS)


def attend_pool(r, v):
    """``f[c] = mean over pixels of r * v[..., c]``."""
    r = np.asarray(r, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3 or r.shape != v.shape[:2]:
        raise DimensionError(f"attention {r.shape} does not match map {v.shape}")
    return (r[:, :, None] * v).mean(axis=(0, 1))
