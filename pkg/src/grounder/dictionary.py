"""Attribute scoring: logistic baseline, dictionary scores and the top-T MIL loss."""
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers as L
from .embeddings import normalize_token
from .errors import ConfigurationError, ConflictError, DimensionError
from .io import read_fmap, write_fmap
from .numerics import sigmoid

BCE_EPS = 1e-7
DEFAULT_LATENT_DIM = 32


def logistic_score(w, x):
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise DimensionError(f"weight {w.shape} vs feature {x.shape}")
    return float(sigmoid(np.dot(w, x)))


def logistic_score_grad(w, x):
    """(dy/dw, dy/dx)."""
    y = logistic_score(w, x)
    s = y * (1.0 - y)
    return s * np.asarray(x, dtype=np.float64), s * np.asarray(w, dtype=np.float64)


def score_from_sqdist(d2):
    """``2 / (1 + exp(d2))`` evaluated without overflow."""
    return 2.0 * sigmoid(-np.asarray(d2, dtype=np.float64))


def bce(p, label):
    return -(label * math.log(p + BCE_EPS) + (1.0 - label) * math.log(1.0 - p + BCE_EPS))


def bce_grad(p, label):
    return -label / (p + BCE_EPS) + (1.0 - label) / (1.0 - p + BCE_EPS)


@dataclass(frozen=True)
class AttributeDictionary:
    atoms: np.ndarray  # (C, d)
    names: tuple

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        names = tuple(normalize_token(n) for n in self.names)
        if atoms.ndim != 2 or atoms.shape[0] != len(names) or not names:
            raise DimensionError(f"{len(names)} names for atoms of shape {atoms.shape}")
        if len(set(names)) != len(names):
            raise ConflictError("duplicate attribute names")
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "names", names)

    @property
    def dim(self):
        return self.atoms.shape[1]

    def index(self, name):
        return self.names.index(normalize_token(name))

    @classmethod
    def from_table(cls, table, names):
        return cls(np.stack([table.lookup(n) for n in names]), tuple(names))

    def save(self, stem):
        stem = Path(stem)
        Path(f"{stem}.json").write_text(json.dumps(list(self.names)) + "\n", encoding="utf-8")
        write_fmap(f"{stem}.fmap", self.atoms[:, None, :])

    @classmethod
    def load(cls, stem):
        names = json.loads(Path(f"{stem}.json").read_text(encoding="utf-8"))
        atoms = read_fmap(f"{stem}.fmap")
        return cls(atoms[:, 0, :].astype(np.float64), tuple(names))


def add_attribute(d, name, vector):
    name = normalize_token(name)
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (d.dim,):
        raise DimensionError(f"atom must have dim {d.dim}, got {vector.shape}")
    if name in d.names:
        raise ConflictError(f"attribute {name!r} already in dictionary")
    return AttributeDictionary(np.vstack([d.atoms, vector]), d.names + (name,))


@dataclass
class LatentTransforms:
    """``phi`` maps features, ``psi`` maps atoms; empty stacks are identities."""
    phi: list
    psi: list

    def __post_init__(self):
        for stack in (self.phi, self.psi):
            if stack:
                L.check_chain(stack)
        if self.phi and self.psi and self.phi[-1].out_dim != self.psi[-1].out_dim:
            raise DimensionError("phi and psi must end at the same latent dimension")


def identity_transforms():
    return LatentTransforms([], [])


def init_latent_transforms(rng, feat_dim, atom_dim, latent_dim=DEFAULT_LATENT_DIM,
                           hidden=DEFAULT_LATENT_DIM):
    acts = ["relu", "identity"]
    return LatentTransforms(L.init_stack(rng, [feat_dim, hidden, latent_dim], acts),
                            L.init_stack(rng, [atom_dim, hidden, latent_dim], acts))


def _apply(stack, x, keep=False):
    x = np.asarray(x, dtype=np.float64)
    if not stack:
        return (x, None) if keep else x
    return L.forward(stack, x, keep=keep)


def dict_score_fixed(d, x):
    """Scores ``2 / (1 + exp(||d_i - x||^2))`` for every atom; rows of ``x`` broadcast."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d.dim:
        raise DimensionError(f"feature dim {x.shape[-1]} vs atom dim {d.dim}")
    d2 = ((x[..., None, :] - d.atoms) ** 2).sum(axis=-1)
    return score_from_sqdist(d2)


def dict_score_fixed_grad(d, x, grad_y):
    """Backprop ``sum_i grad_y[i] * y_i`` to (d atoms, x) for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    y = dict_score_fixed(d, x)
    diff = x - d.atoms  # (C, d)
    g_d2 = np.asarray(grad_y) * -y * (1.0 - y / 2.0)
    gx = 2.0 * (g_d2[:, None] * diff).sum(axis=0)
    return -2.0 * g_d2[:, None] * diff, gx


def latent_forward(d, x, t):
    """Latent scores plus everything the backward pass needs."""
    x = np.asarray(x, dtype=np.float64)
    z, zc = _apply(t.phi, x, keep=True)
    a, ac = _apply(t.psi, d.atoms, keep=True)
    if z.shape[-1] != a.shape[-1]:
        raise DimensionError(f"latent dims differ: {z.shape[-1]} vs {a.shape[-1]}")
    diff = z[..., None, :] - a  # (..., C, L)
    y = score_from_sqdist((diff ** 2).sum(axis=-1))
    return y, (diff, y, zc, ac)


def dict_score_latent(d, x, t):
    x = np.asarray(x, dtype=np.float64)
    in_dim = t.phi[0].in_dim if t.phi else d.dim
    if x.shape[-1] != in_dim:
        raise DimensionError(f"feature dim {x.shape[-1]} vs transform input {in_dim}")
    if t.psi and t.psi[0].in_dim != d.dim:
        raise DimensionError(f"atom dim {d.dim} vs psi input {t.psi[0].in_dim}")
    return latent_forward(d, x, t)[0]


def latent_backward(t, cache, grad_y):
    """Gradients of ``sum(grad_y * y)``: (phi grads, psi grads, dx, d_atoms)."""
    diff, y, zc, ac = cache
    g_d2 = np.asarray(grad_y, dtype=np.float64) * -y * (1.0 - y / 2.0)
    g_diff = 2.0 * g_d2[..., None] * diff
    gz = g_diff.sum(axis=-2)
    ga = -g_diff.reshape(-1, *g_diff.shape[-2:]).sum(axis=0)
    phi_grads, dx = L.backward(t.phi, zc, gz) if t.phi else ([], gz)
    psi_grads, datoms = L.backward(t.psi, ac, ga) if t.psi else ([], ga)
    return phi_grads, psi_grads, dx, datoms


@dataclass
class MILResult:
    loss: float
    grad: np.ndarray  # d loss / d score, same shape as the map
    mean_score: float
    selected: np.ndarray  # flat indices, best first


def top_t_indices(flat, T):
    """Indices of the T largest values; equal values keep lower flat index first."""
    return np.argsort(-flat, kind="stable")[:T]


def default_mil_T(n_pixels):
    return max(1, math.ceil(0.05 * n_pixels))


def mil_topT_loss(score_map, label, T):
    """Binary cross-entropy on the mean of the T highest pixel scores."""
    s = np.asarray(score_map, dtype=np.float64)
    flat = s.reshape(-1)
    if T < 1 or T > flat.size:
        raise ConfigurationError(f"T={T} outside [1, {flat.size}]")
    idx = top_t_indices(flat, T)
    mean = float(flat[idx].mean())
    grad = np.zeros_like(flat)
    grad[idx] = bce_grad(mean, label) / T
    return MILResult(bce(mean, label), grad.reshape(s.shape), mean, idx)


def top_t_tied(score_map, T, tol=0.0):
    """True when the T-th and (T+1)-th largest scores are within ``tol``."""
    flat = np.sort(np.asarray(score_map, dtype=np.float64).reshape(-1))[::-1]
    if T >= flat.size:
        return False
    return bool(flat[T - 1] - flat[T] <= tol)
