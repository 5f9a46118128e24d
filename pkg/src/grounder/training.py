"""Stagewise SGD for the entity, attribute and color models, with gradient checks.

Losses are written as ``loss_fn(params) -> (loss, grads)`` over a flat dict of
parameter arrays so the same function drives training and finite-difference
verification. Parameters are stored in float32; every loss is evaluated in
float64.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import layers as L
from .dictionary import (AttributeDictionary, LatentTransforms, bce, bce_grad,
                         default_mil_T, mil_topT_loss, score_from_sqdist, top_t_tied)
from .errors import ConfigurationError, DataError, TieError, TrainingDiverged
from .grounding import AttributeModel, ColorModel, EntityModel
from .io import read_fmap
from .numerics import finite_difference_grad, softmax
from .sketch import AttentionHeadParams, make_sketch_params, mcb_pool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    learning_rate: float = 0.05
    momentum: float = 0.9
    stage1_epochs: int = 30
    stage2_epochs: int = 60
    color_epochs: int = 30
    batch_size: int = 8
    attention_l2: float = 0.3
    grad_clip: float | None = 5.0
    mil_T: int | None = None
    pixel_loss_weight: float = 1.0
    reweight: bool = True
    finetune_atoms: bool = False
    sketch_dim: int = 256
    hidden: tuple = (64, 64)
    latent_dim: int = 32
    color_hidden: int = 16
    color_channels: tuple = (0, 3)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if min(self.stage1_epochs, self.stage2_epochs, self.color_epochs) < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive or null")
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "color_channels", tuple(self.color_channels))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class Record:
    features: str
    entity: str | None = None
    attributes: tuple = ()
    colors: tuple = ()
    color_labels: str | None = None
    box: tuple | None = None

    def load(self):
        return read_fmap(self.features)


def load_manifest(path):
    """JSON-lines manifest; relative paths resolve against the manifest's folder."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            unknown = set(d) - {"features", "entity", "attributes", "colors", "color_labels", "box"}
            if unknown or "features" not in d:
                raise DataError(f"{path}:{lineno}: bad record keys {sorted(d)}")

            def resolve(p):
                return None if p is None else str(p if Path(p).is_absolute() else base / p)
            records.append(Record(resolve(d["features"]), d.get("entity"),
                                  tuple(d.get("attributes", ())), tuple(d.get("colors", ())),
                                  resolve(d.get("color_labels")),
                                  None if d.get("box") is None else tuple(d["box"])))
    return records


def write_manifest(path, records):
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            d = {"features": _rel(r.features, base), "entity": r.entity,
                 "attributes": list(r.attributes), "colors": list(r.colors)}
            if r.color_labels is not None:
                d["color_labels"] = _rel(r.color_labels, base)
            if r.box is not None:
                d["box"] = list(r.box)
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def _rel(p, base):
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)


def class_weights(label_counts):
    """Inverse-frequency weights normalized to mean 1."""
    counts = np.asarray(label_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 1):
        raise ConfigurationError("every class needs at least one example")
    inv = 1.0 / counts
    return inv / inv.mean()


# ---------------------------------------------------------------- parameters

def _stack(params, prefix, acts):
    return [L.Dense(params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"], a)
            for i, a in enumerate(acts)]


def _put(grads, prefix, stack_grads):
    for i, (gw, gb) in enumerate(stack_grads):
        grads[f"{prefix}.{i}.weight"] = gw
        grads[f"{prefix}.{i}.bias"] = gb


def head_acts(n_hidden):
    return ["relu"] * n_hidden + ["sigmoid"]


LATENT_ACTS = ["relu", "identity"]


class Momentum:
    """SGD with classical momentum; velocities kept in float64.

    With ``clip`` set, the gradient over ``names`` is rescaled to at most that
    global L2 norm before the update.
    """

    def __init__(self, lr, momentum, clip=None):
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = {}

    def step(self, params, grads, names):
        scale = 1.0
        if self.clip is not None:
            norm = np.sqrt(sum(float((grads[n] ** 2).sum()) for n in names))
            if norm > self.clip:
                scale = self.clip / norm
        for n in names:
            v = self.velocity.get(n)
            if v is None:
                v = np.zeros(params[n].shape)
            v = self.momentum * v - self.lr * scale * grads[n]
            self.velocity[n] = v
            params[n] = (params[n].astype(np.float64) + v).astype(params[n].dtype)


def _check_finite(loss, params, epoch, batch):
    if not np.isfinite(loss):
        norm = float(np.sqrt(sum(float((p.astype(np.float64) ** 2).sum()) for p in params.values())))
        raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch}; "
                               f"parameter norm {norm:.4g}")


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _run_sgd(loss_fn, params, names, data, cfg, epochs, rng, tag):
    opt = Momentum(cfg.learning_rate, cfg.momentum, cfg.grad_clip)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for b, idx in enumerate(_batches(rng, len(data), cfg.batch_size)):
            loss, grads = loss_fn(params, [data[i] for i in idx])
            _check_finite(loss, params, epoch, b)
            opt.step(params, grads, names)
            total += loss * len(idx)
        history.append(total / len(data))
        log.debug("%s epoch %d loss %.6f", tag, epoch, history[-1])
    return history


# ---------------------------------------------------------------- entity

@dataclass
class EntitySample:
    phis: np.ndarray | None  # (K, P, S) pooled text-visual features, one per class word
    feats: np.ndarray  # (P, C)
    label: int
    weight: float = 1.0


def entity_loss(params, batch, n_hidden, attention_l2, stage=2):
    """Mean weighted K-way cross-entropy plus ``attention_l2 * mean(R^2)``.

    Stage 1 is the plain classifier on globally pooled features (R == 1).
    """
    W = params["cls.weight"].astype(np.float64)
    b = params["cls.bias"].astype(np.float64)
    head = _stack(params, "head", head_acts(n_hidden)) if stage == 2 else None
    grads = {k: np.zeros(v.shape) for k, v in params.items()}
    total = 0.0
    nb = len(batch)
    for s in batch:
        P = s.feats.shape[0]
        K = W.shape[0]
        if stage == 1:
            f = np.broadcast_to(s.feats.mean(axis=0), (K, s.feats.shape[1]))
        else:
            rows = s.phis.reshape(K * P, -1)
            r, cache = L.forward(head, rows, keep=True)
            R = r.reshape(K, P)
            f = R @ s.feats / P  # (K, C)
        logits = (W * f).sum(axis=1) + b
        p = softmax(logits)
        ce = -np.log(p[s.label] + 1e-300)
        total += s.weight * ce
        dlog = s.weight * (p - np.eye(K)[s.label]) / nb
        grads["cls.weight"] += dlog[:, None] * f
        grads["cls.bias"] += dlog
        if stage == 2:
            total += attention_l2 * float((R ** 2).mean())
            df = dlog[:, None] * W  # (K, C)
            dR = df @ s.feats.T / P + attention_l2 * 2.0 * R / (K * P * nb)
            hg, _ = L.backward(head, cache, dR.reshape(K * P, 1))
            for i, (gw, gbias) in enumerate(hg):
                grads[f"head.{i}.weight"] += gw
                grads[f"head.{i}.bias"] += gbias
    return total / nb, grads


def _entity_phis(table, class_names, v, pt, pv):
    return np.stack([mcb_pool(table.lookup(c), v, pt, pv).reshape(-1, pt.sketch_dim)
                     for c in class_names]).astype(np.float32)


def _sketch_pair(cfg, text_dim, feat_dim, salt):
    base = 1000 * cfg.seed + salt
    return (make_sketch_params(base + 1, text_dim, cfg.sketch_dim),
            make_sketch_params(base + 2, feat_dim, cfg.sketch_dim))


def train_entity(records, class_names, table, cfg=TrainConfig(), return_history=False):
    """Two stages: classifier on pooled features, then attention head + classifier."""
    class_names = tuple(class_names)
    if len(class_names) < 2:
        raise ConfigurationError("entity training needs K >= 2 classes")
    for r in records:
        if r.entity not in class_names:
            raise DataError(f"{r.features}: entity label {r.entity!r} not among {class_names}")
    labels = [class_names.index(r.entity) for r in records]
    counts = np.bincount(labels, minlength=len(class_names))
    weights = class_weights(counts) if cfg.reweight else np.ones(len(class_names))
    maps = [r.load() for r in records]
    feat_dim = maps[0].shape[2]
    pt, pv = _sketch_pair(cfg, table.dim, feat_dim, salt=0)
    data = [EntitySample(_entity_phis(table, class_names, v, pt, pv),
                         v.reshape(-1, feat_dim).astype(np.float64), lab, float(weights[lab]))
            for v, lab in zip(maps, labels)]
    init = np.random.default_rng([cfg.seed, 1])
    order = np.random.default_rng([cfg.seed, 2])
    head_layers = L.init_stack(init, [cfg.sketch_dim, *cfg.hidden, 1], head_acts(len(cfg.hidden)))
    params = {"cls.weight": L.init_stack(init, [feat_dim, len(class_names)], ["identity"])[0].weight,
              "cls.bias": np.zeros(len(class_names), dtype=np.float32)}
    params.update(L.stack_arrays("head", head_layers))
    nh = len(cfg.hidden)
    hist1 = _run_sgd(lambda p, b: entity_loss(p, b, nh, cfg.attention_l2, stage=1), params,
                     ["cls.weight", "cls.bias"], data, cfg, cfg.stage1_epochs, order, "entity-1")
    hist2 = _run_sgd(lambda p, b: entity_loss(p, b, nh, cfg.attention_l2, stage=2), params,
                     list(params), data, cfg, cfg.stage2_epochs, order, "entity-2")
    head = AttentionHeadParams(_stack(params, "head", head_acts(nh)))
    model = EntityModel(pt, pv, head, params["cls.weight"], params["cls.bias"], class_names)
    return (model, hist1 + hist2) if return_history else model


def classify(model, v, table):
    """Predicted class index of one map using the attended, class-conditioned features."""
    from .grounding import ground_entity
    from .sketch import attend_pool
    logits = [float(model.weight[k].astype(np.float64) @ attend_pool(ground_entity(c, v, model, table), v)
                    + model.bias[k]) for k, c in enumerate(model.class_names)]
    return int(np.argmax(logits))


# ---------------------------------------------------------------- attributes

@dataclass
class AttributeSample:
    phis: np.ndarray  # (C_attr, P, S)
    feats: np.ndarray  # (P, C)
    labels: np.ndarray  # (C_attr,) in {0, 1}


@dataclass
class AttributeLossSpec:
    n_hidden: int
    class_weight: np.ndarray
    attention_l2: float
    T: int
    pixel_weight: float = 1.0
    stage: int = 2
    tie_tol: float = 0.0
    finetune_atoms: bool = False


def attribute_loss(params, batch, spec):
    """Per attribute: weighted BCE of the pooled dictionary score plus the top-T
    pixel loss, summed over attributes; plus the attention L2 term. Batch mean.

    ``params["atoms"]`` holds the dictionary rows; its gradient is reported
    only with ``finetune_atoms``.
    """
    head = _stack(params, "head", head_acts(spec.n_hidden)) if spec.stage == 2 else None
    phi = _stack(params, "phi", LATENT_ACTS)
    psi = _stack(params, "psi", LATENT_ACTS)
    atoms = params["atoms"].astype(np.float64)
    C = atoms.shape[0]
    grads = {k: np.zeros(v.shape) for k, v in params.items()}
    A, acache = L.forward(psi, atoms, keep=True)  # (C, Lat)
    gA = np.zeros_like(A)
    nb = len(batch)
    total = 0.0
    for s in batch:
        V = s.feats
        P = V.shape[0]
        if spec.stage == 2:
            r, hcache = L.forward(head, s.phis.reshape(C * P, -1), keep=True)
            R = r.reshape(C, P)
        else:
            R = np.ones((C, P))
        X = R[:, :, None] * V[None]  # (C, P, F)
        xbar = X.mean(axis=1)  # (C, F)
        rows = np.concatenate([xbar, X.reshape(C * P, -1)]) if spec.stage == 2 else xbar
        Z, zcache = L.forward(phi, rows, keep=True)
        gZ = np.zeros_like(Z)
        for i in range(C):
            w = spec.class_weight[i] / nb
            lab = float(s.labels[i])
            diff_g = Z[i] - A[i]
            yg = float(score_from_sqdist((diff_g ** 2).sum()))
            total += spec.class_weight[i] * bce(yg, lab)
            gd2 = w * bce_grad(yg, lab) * -yg * (1.0 - yg / 2.0)
            gZ[i] += 2.0 * gd2 * diff_g
            gA[i] -= 2.0 * gd2 * diff_g
            if spec.stage != 2:
                continue
            zp = Z[C + i * P:C + (i + 1) * P]
            diff_p = zp - A[i]
            yp = score_from_sqdist((diff_p ** 2).sum(axis=1))
            if spec.tie_tol > 0 and top_t_tied(yp, spec.T, spec.tie_tol):
                raise TieError(f"top-{spec.T} selection tied for attribute {i}")
            mil = mil_topT_loss(yp, lab, spec.T)
            total += spec.class_weight[i] * spec.pixel_weight * mil.loss
            gdp = (w * spec.pixel_weight) * mil.grad * -yp * (1.0 - yp / 2.0)
            gZ[C + i * P:C + (i + 1) * P] += 2.0 * gdp[:, None] * diff_p
            gA[i] -= 2.0 * (gdp[:, None] * diff_p).sum(axis=0)
        pg, drows = L.backward(phi, zcache, gZ)
        for i, (gw, gbias) in enumerate(pg):
            grads[f"phi.{i}.weight"] += gw
            grads[f"phi.{i}.bias"] += gbias
        if spec.stage == 2:
            total += spec.attention_l2 * float((R ** 2).mean())
            dX = drows[C:].reshape(C, P, -1) + drows[:C, None, :] / P
            dR = (dX * V[None]).sum(axis=2) + spec.attention_l2 * 2.0 * R / (C * P * nb)
            hg, _ = L.backward(head, hcache, dR.reshape(C * P, 1))
            for i, (gw, gbias) in enumerate(hg):
                grads[f"head.{i}.weight"] += gw
                grads[f"head.{i}.bias"] += gbias
    sg, datoms = L.backward(psi, acache, gA)
    _put(grads, "psi", sg)
    grads["atoms"] = datoms if spec.finetune_atoms else np.zeros(atoms.shape)
    return total / nb, grads


def _attribute_phis(dictionary, v, pt, pv):
    return np.stack([mcb_pool(a, v, pt, pv).reshape(-1, pt.sketch_dim)
                     for a in dictionary.atoms]).astype(np.float32)


def train_attributes(records, attribute_names, table, cfg=TrainConfig(), return_history=False):
    """Multi-label weak training of the dictionary-scored attribute module."""
    names = tuple(attribute_names)
    for r in records:
        bad = [a for a in r.attributes if a not in names]
        if bad:
            raise ConfigurationError(f"{r.features}: attributes {bad} not in dictionary {names}")
    dictionary = AttributeDictionary.from_table(table, names)
    labels = np.array([[1.0 if n in r.attributes else 0.0 for n in names] for r in records])
    counts = labels.sum(axis=0)
    weights = class_weights(counts) if cfg.reweight else np.ones(len(names))
    maps = [r.load() for r in records]
    feat_dim = maps[0].shape[2]
    P = maps[0].shape[0] * maps[0].shape[1]
    T = cfg.mil_T or default_mil_T(P)
    pt, pv = _sketch_pair(cfg, table.dim, feat_dim, salt=500)
    data = [AttributeSample(_attribute_phis(dictionary, v, pt, pv),
                            v.reshape(-1, feat_dim).astype(np.float64), lab)
            for v, lab in zip(maps, labels)]
    init = np.random.default_rng([cfg.seed, 3])
    order = np.random.default_rng([cfg.seed, 4])
    nh = len(cfg.hidden)
    params = {"atoms": dictionary.atoms.astype(np.float32)}
    params.update(L.stack_arrays("head", L.init_stack(
        init, [cfg.sketch_dim, *cfg.hidden, 1], head_acts(nh))))
    params.update(L.stack_arrays("phi", L.init_stack(
        init, [feat_dim, cfg.latent_dim, cfg.latent_dim], LATENT_ACTS)))
    params.update(L.stack_arrays("psi", L.init_stack(
        init, [table.dim, cfg.latent_dim, cfg.latent_dim], LATENT_ACTS)))
    latent = [n for n in params if n.startswith(("phi.", "psi."))]
    if cfg.finetune_atoms:
        latent.append("atoms")
    spec1 = AttributeLossSpec(nh, weights, cfg.attention_l2, T, cfg.pixel_loss_weight, stage=1,
                              finetune_atoms=cfg.finetune_atoms)
    spec2 = AttributeLossSpec(nh, weights, cfg.attention_l2, T, cfg.pixel_loss_weight, stage=2,
                              finetune_atoms=cfg.finetune_atoms)
    hist1 = _run_sgd(lambda p, b: attribute_loss(p, b, spec1), params, latent, data, cfg,
                     cfg.stage1_epochs, order, "attr-1")
    hist2 = _run_sgd(lambda p, b: attribute_loss(p, b, spec2), params,
                     latent + [n for n in params if n.startswith("head.")], data, cfg,
                     cfg.stage2_epochs, order, "attr-2")
    model = AttributeModel(pt, pv, AttentionHeadParams(_stack(params, "head", head_acts(nh))),
                           AttributeDictionary(params["atoms"].astype(np.float64), names),
                           LatentTransforms(_stack(params, "phi", LATENT_ACTS),
                                            _stack(params, "psi", LATENT_ACTS)))
    return (model, hist1 + hist2) if return_history else model


def attribute_global_scores(model, v):
    """Image-level dictionary score per attribute (pooled attended feature)."""
    from .dictionary import dict_score_latent
    from .sketch import attend_pool, attention_head
    out = []
    for i, atom in enumerate(model.dictionary.atoms):
        r = attention_head(mcb_pool(atom, v, model.pt, model.pv), model.head)
        single = AttributeDictionary(atom[None, :], ("_",))
        out.append(float(dict_score_latent(single, attend_pool(r, v), model.transforms)[0]))
    return np.array(out)


# ---------------------------------------------------------------- color

def color_loss(params, batch, n_layers):
    """Mean pixel cross-entropy over labelled pixels (label -1 is ignored)."""
    acts = ["relu"] * (n_layers - 1) + ["identity"]
    stack = _stack(params, "color", acts)
    X = np.concatenate([b[0] for b in batch])
    y = np.concatenate([b[1] for b in batch])
    keep = y >= 0
    X, y = X[keep], y[keep]
    grads = {k: np.zeros(v.shape) for k, v in params.items()}
    if y.size == 0:
        return 0.0, grads
    logits, cache = L.forward(stack, X, keep=True)
    p = softmax(logits)
    n = y.size
    loss = float(-np.log(p[np.arange(n), y] + 1e-300).mean())
    g = p.copy()
    g[np.arange(n), y] -= 1.0
    sg, _ = L.backward(stack, cache, g / n)
    _put(grads, "color", sg)
    return loss, grads


def train_color(records, color_names, cfg=TrainConfig(), return_history=False):
    """Fully supervised per-pixel color classifier."""
    color_names = tuple(color_names)
    lo, hi = cfg.color_channels
    data = []
    for r in records:
        if r.color_labels is None:
            raise DataError(f"{r.features}: no pixel color labels")
        v = r.load()
        lab = np.rint(read_fmap(r.color_labels)[:, :, 0]).astype(np.int64).reshape(-1)
        if lab.size != v.shape[0] * v.shape[1]:
            raise DataError(f"{r.color_labels}: label map size does not match features")
        if np.any(lab >= len(color_names)) or np.any(lab < -1):
            raise DataError(f"{r.color_labels}: color label out of range")
        data.append((v[:, :, lo:hi].reshape(-1, hi - lo).astype(np.float64), lab))
    init = np.random.default_rng([cfg.seed, 5])
    order = np.random.default_rng([cfg.seed, 6])
    dims = [hi - lo, cfg.color_hidden, len(color_names)]
    acts = ["relu", "identity"]
    params = L.stack_arrays("color", L.init_stack(init, dims, acts))
    hist = _run_sgd(lambda p, b: color_loss(p, b, len(acts)), params, list(params), data, cfg,
                    cfg.color_epochs, order, "color")
    model = ColorModel(_stack(params, "color", acts), color_names, (lo, hi))
    return (model, hist) if return_history else model


# ---------------------------------------------------------------- verification

@dataclass
class GradCheckReport:
    max_relative_error: float
    offending_parameter: str | None
    per_block: dict = field(default_factory=dict)
    passed: bool = True


def grad_check(loss_fn, params, eps=1e-6, tolerance=1e-4, max_entries=None, seed=0):
    """Compare ``loss_fn``'s analytic gradients with central differences.

    The error of a block is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``
    over the checked entries. With ``max_entries`` only that many entries per
    block are sampled (deterministically from ``seed``).
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = loss_fn(params)
    rng = np.random.default_rng(seed)
    per_block = {}
    for name, value in params.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        sub = flat[idx].copy()

        def f(x, name=name, idx=idx):
            trial = dict(params)
            arr = params[name].copy().reshape(-1)
            arr[idx] = x
            trial[name] = arr.reshape(params[name].shape)
            return loss_fn(trial)[0]
        numeric = finite_difference_grad(f, sub, eps)
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)[idx]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        per_block[name] = 0.0 if scale == 0 else float(np.linalg.norm(a - numeric) / scale)
    worst = max(per_block, key=per_block.get) if per_block else None
    err = per_block[worst] if worst else 0.0
    return GradCheckReport(err, worst if err > tolerance else None, per_block, err <= tolerance)
