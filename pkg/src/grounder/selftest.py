"""Quick numeric self-checks behind ``grounder selftest``.

Each check returns ``(name, passed, detail)``; nothing here touches disk.
"""
import time

import numpy as np

from . import layers as L
from .dictionary import (AttributeDictionary, LatentTransforms, dict_score_fixed,
                         dict_score_fixed_grad, dict_score_latent, latent_backward,
                         latent_forward, logistic_score, logistic_score_grad, mil_topT_loss)
from .numerics import circular_convolve, fft, finite_difference_grad, ifft
from .sketch import count_sketch, init_attention_head, make_sketch_params, mcb_pool
from .training import EntitySample, color_loss, entity_loss, grad_check


def _rel(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_fft(rng):
    n = 32
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    k = np.arange(n)
    dft = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
    err = max(np.abs(fft(x) - dft).max(), np.abs(ifft(fft(x)) - x).max())
    return err < 1e-9, f"max error {err:.2e}"


def check_convolution(rng):
    a, b = rng.normal(size=(2, 16))
    direct = np.array([sum(a[j] * b[(k - j) % 16] for j in range(16)) for k in range(16)])
    err = np.abs(circular_convolve(a, b) - direct).max()
    return err < 1e-9, f"max error {err:.2e}"


def check_sketch_unbiased(rng, seeds=2000):
    x = rng.normal(size=8)
    y = x + 0.5 * rng.normal(size=8)
    est = 0.0
    for s in range(seeds):
        p = make_sketch_params(s, 8, 8)
        est += count_sketch(x, p) @ count_sketch(y, p)
    est /= seeds
    err = abs(est - x @ y) / abs(x @ y)
    return err < 0.05, f"relative error {err:.3f} over {seeds} seeds"


def explicit_outer_sketch(t, v, pt, pv):
    """Count Sketch of vec(t v^T) under the combined hash (h_t + h_v) mod d."""
    out = np.zeros(pt.sketch_dim)
    for i in range(pt.input_dim):
        for j in range(pv.input_dim):
            b = (pt.bucket[i] + pv.bucket[j]) % pt.sketch_dim
            out[b] += pt.sign[i] * pv.sign[j] * t[i] * v[j]
    return out


def check_mcb_identity(rng, trials=20):
    worst = 0.0
    for s in range(trials):
        pt, pv = make_sketch_params(2 * s, 5, 16), make_sketch_params(2 * s + 1, 7, 16)
        t, v = rng.normal(size=5), rng.normal(size=(1, 1, 7))
        fast = mcb_pool(t, v, pt, pv, normalize=False)[0, 0]
        worst = max(worst, np.abs(fast - explicit_outer_sketch(t, v[0, 0], pt, pv)).max())
    return worst < 1e-6, f"max error {worst:.2e}"


def check_logistic_grad(rng):
    w, x = rng.normal(size=(2, 6))
    gw, gx = logistic_score_grad(w, x)
    nw = finite_difference_grad(lambda z: logistic_score(z, x), w)
    nx = finite_difference_grad(lambda z: logistic_score(w, z), x)
    err = max(_rel(gw, nw), _rel(gx, nx))
    return err < 1e-4, f"relative error {err:.2e}"


def check_fixed_dict_grad(rng):
    d = AttributeDictionary(rng.normal(size=(3, 4)) * 0.5, ("a", "b", "c"))
    x, gy = rng.normal(size=4) * 0.5, rng.normal(size=3)
    ga, gx = dict_score_fixed_grad(d, x, gy)
    nx = finite_difference_grad(lambda z: float(gy @ dict_score_fixed(d, z)), x)
    na = finite_difference_grad(
        lambda a: float(gy @ dict_score_fixed(AttributeDictionary(a.reshape(3, 4), d.names), x)),
        d.atoms.reshape(-1))
    err = max(_rel(gx, nx), _rel(ga, na))
    return err < 1e-4, f"relative error {err:.2e}"


def check_latent_dict_grad(rng):
    phi = L.init_stack(rng, [5, 6, 4], ["relu", "identity"], dtype=np.float64)
    psi = L.init_stack(rng, [3, 6, 4], ["relu", "identity"], dtype=np.float64)
    t = LatentTransforms(phi, psi)
    d = AttributeDictionary(rng.normal(size=(2, 3)) * 0.5, ("a", "b"))
    x, gy = rng.normal(size=5) * 0.5, rng.normal(size=2)
    _, cache = latent_forward(d, x, t)
    _, _, dx, datoms = latent_backward(t, cache, gy)
    nx = finite_difference_grad(lambda z: float(gy @ dict_score_latent(d, z, t)), x)
    na = finite_difference_grad(
        lambda a: float(gy @ dict_score_latent(AttributeDictionary(a.reshape(2, 3), d.names), x, t)),
        d.atoms.reshape(-1))
    err = max(_rel(dx, nx), _rel(datoms, na))
    return err < 1e-4, f"relative error {err:.2e}"


def check_mil_grad(rng):
    s = rng.uniform(0.05, 0.95, size=(4, 4))
    res = mil_topT_loss(s, 1.0, 3)
    num = finite_difference_grad(lambda z: mil_topT_loss(z.reshape(4, 4), 1.0, 3).loss,
                                 s.reshape(-1))
    err = _rel(res.grad, num)
    return err < 1e-4, f"relative error {err:.2e}"


def check_entity_grad(rng):
    K, P, S, C = 2, 4, 8, 3
    head = init_attention_head(rng, S, (5,))
    params = {"cls.weight": rng.normal(size=(K, C)), "cls.bias": rng.normal(size=K)}
    params.update(L.stack_arrays("head", head.layers))
    batch = [EntitySample(rng.normal(size=(K, P, S)), rng.normal(size=(P, C)), i % K)
             for i in range(2)]
    rep = grad_check(lambda p: entity_loss(p, batch, 1, 0.5, stage=2), params)
    return rep.passed, f"relative error {rep.max_relative_error:.2e}"


def check_color_grad(rng):
    params = L.stack_arrays("color", L.init_stack(rng, [3, 5, 3], ["relu", "identity"],
                                                  dtype=np.float64))
    batch = [(rng.normal(size=(6, 3)), rng.integers(-1, 3, size=6))]
    rep = grad_check(lambda p: color_loss(p, batch, 2), params)
    return rep.passed, f"relative error {rep.max_relative_error:.2e}"


CHECKS = (("fft matches DFT", check_fft),
          ("circular convolution", check_convolution),
          ("count sketch unbiased", check_sketch_unbiased),
          ("mcb equals outer-product sketch", check_mcb_identity),
          ("logistic score gradient", check_logistic_grad),
          ("fixed dictionary gradient", check_fixed_dict_grad),
          ("latent dictionary gradient", check_latent_dict_grad),
          ("top-T MIL gradient", check_mil_grad),
          ("attention CE + L2 gradient", check_entity_grad),
          ("color CE gradient", check_color_grad))


def run_checks(seed=0):
    results = []
    for k, (name, fn) in enumerate(CHECKS):
        start = time.perf_counter()
        try:
            ok, detail = fn(np.random.default_rng([seed, k]))
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), f"{detail} ({time.perf_counter() - start:.2f}s)"))
    return results
