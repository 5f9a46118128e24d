"""The three grounding modules, their composition and the end-to-end pipeline."""
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .dictionary import AttributeDictionary, LatentTransforms, dict_score_latent
from .embeddings import cosine, nearest, normalize_token
from .errors import ConfigurationError, DimensionError, NotFoundError
from .io import load_container, save_container
from .numerics import as_feature_map, softmax
from .parser import DEFAULT_SIM_THRESHOLD, parse_query
from .proposals import ProposalConfig, heatmap_to_candidates, nms, select_box
from .sketch import AttentionHeadParams, SketchParams, attention_head, mcb_pool

DEFAULT_REJECT_THRESHOLD = 0.5


def _sketch_arrays(prefix, p):
    return {f"{prefix}.bucket": p.bucket, f"{prefix}.sign": p.sign.astype(np.float32)}


def _sketch_meta(p):
    return {"seed": p.seed, "input_dim": p.input_dim, "sketch_dim": p.sketch_dim}


def _sketch_from(prefix, arrays, meta):
    bucket = arrays[f"{prefix}.bucket"].astype(np.int64)
    sign = arrays[f"{prefix}.sign"].astype(np.float64)
    bucket.setflags(write=False)
    sign.setflags(write=False)
    return SketchParams(meta["input_dim"], meta["sketch_dim"], bucket, sign, meta["seed"])


@dataclass
class EntityModel:
    pt: SketchParams
    pv: SketchParams
    head: AttentionHeadParams
    weight: np.ndarray  # (K, C)
    bias: np.ndarray  # (K,)
    class_names: tuple

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if self.weight.shape[0] != len(self.class_names) or self.bias.shape != (len(self.class_names),):
            raise DimensionError("classifier rows must match class names")

    def save(self, path):
        arrays = {"classifier.weight": self.weight, "classifier.bias": self.bias}
        arrays.update(_sketch_arrays("pt", self.pt))
        arrays.update(_sketch_arrays("pv", self.pv))
        arrays.update(L.stack_arrays("head", self.head.layers))
        meta = {"class_names": list(self.class_names), "pt": _sketch_meta(self.pt),
                "pv": _sketch_meta(self.pv), "head": L.stack_meta(self.head.layers)}
        save_container(path, "entity", arrays, meta)

    @classmethod
    def load(cls, path):
        _, a, meta = load_container(path, "entity")
        return cls(_sketch_from("pt", a, meta["pt"]), _sketch_from("pv", a, meta["pv"]),
                   AttentionHeadParams(L.stack_from_arrays("head", a, meta["head"])),
                   a["classifier.weight"].astype(np.float32), a["classifier.bias"].astype(np.float32),
                   tuple(meta["class_names"]))


@dataclass
class AttributeModel:
    pt: SketchParams
    pv: SketchParams
    head: AttentionHeadParams
    dictionary: AttributeDictionary
    transforms: LatentTransforms

    def save(self, path):
        arrays = {"dictionary.atoms": self.dictionary.atoms}
        arrays.update(_sketch_arrays("pt", self.pt))
        arrays.update(_sketch_arrays("pv", self.pv))
        arrays.update(L.stack_arrays("head", self.head.layers))
        arrays.update(L.stack_arrays("phi", self.transforms.phi))
        arrays.update(L.stack_arrays("psi", self.transforms.psi))
        meta = {"names": list(self.dictionary.names), "pt": _sketch_meta(self.pt),
                "pv": _sketch_meta(self.pv), "head": L.stack_meta(self.head.layers),
                "phi": L.stack_meta(self.transforms.phi), "psi": L.stack_meta(self.transforms.psi)}
        save_container(path, "attribute", arrays, meta)

    @classmethod
    def load(cls, path):
        _, a, meta = load_container(path, "attribute")
        return cls(_sketch_from("pt", a, meta["pt"]), _sketch_from("pv", a, meta["pv"]),
                   AttentionHeadParams(L.stack_from_arrays("head", a, meta["head"])),
                   AttributeDictionary(a["dictionary.atoms"], tuple(meta["names"])),
                   LatentTransforms(L.stack_from_arrays("phi", a, meta["phi"]),
                                    L.stack_from_arrays("psi", a, meta["psi"])))


@dataclass
class ColorModel:
    """Per-pixel classifier over ``channels[0]:channels[1]`` of the feature map."""
    layers: list
    color_names: tuple
    channels: tuple = (0, 3)

    def __post_init__(self):
        self.color_names = tuple(normalize_token(c) for c in self.color_names)
        self.channels = tuple(int(c) for c in self.channels)
        L.check_chain(self.layers)
        if self.layers[-1].out_dim != len(self.color_names):
            raise DimensionError("color model output width must equal the number of color names")
        if self.layers[0].in_dim != self.channels[1] - self.channels[0]:
            raise DimensionError("color model input width does not match its channel slice")

    def probabilities(self, v):
        v = as_feature_map(v)
        lo, hi = self.channels
        if v.shape[2] < hi:
            raise DimensionError(f"map has {v.shape[2]} channels, color model reads {lo}:{hi}")
        h, w, _ = v.shape
        logits = L.forward(self.layers, v[:, :, lo:hi].reshape(h * w, hi - lo))
        return softmax(logits).reshape(h, w, -1)

    def save(self, path):
        meta = {"color_names": list(self.color_names), "channels": list(self.channels),
                "layers": L.stack_meta(self.layers)}
        save_container(path, "color", L.stack_arrays("layers", self.layers), meta)

    @classmethod
    def load(cls, path):
        _, a, meta = load_container(path, "color")
        return cls(L.stack_from_arrays("layers", a, meta["layers"]),
                   tuple(meta["color_names"]), tuple(meta["channels"]))


def ground_entity(entity_class, v, m, table):
    if entity_class not in m.class_names:
        raise NotFoundError(f"entity class {entity_class!r} not in model")
    phi = mcb_pool(table.lookup(entity_class), v, m.pt, m.pv)
    return attention_head(phi, m.head)


def _attribute_atom(token, m, table, sim_threshold):
    """Word vector to score ``token`` with, or None if it is counterfactual to the corpus.

    Novel words close enough to an existing atom are scored with their own
    vector, which is what keeps the dictionary open to unseen attributes.
    """
    token = normalize_token(token)
    if token in m.dictionary.names:
        return m.dictionary.atoms[m.dictionary.index(token)]
    if token not in table:
        return None
    vec = table.lookup(token)
    if max(cosine(vec, atom) for atom in m.dictionary.atoms) >= sim_threshold:
        return vec
    return None


def attribute_token_map(atom, v, m):
    """Per-pixel latent dictionary score of the attended feature for one atom."""
    v = np.asarray(v, dtype=np.float64)
    r = attention_head(mcb_pool(atom, v, m.pt, m.pv), m.head)
    attended = r[:, :, None] * v
    single = AttributeDictionary(np.asarray(atom)[None, :], ("_",))
    return dict_score_latent(single, attended, m.transforms)[..., 0]


def ground_attributes(attr_tokens, v, m, table, sim_threshold=DEFAULT_SIM_THRESHOLD):
    """Mean over tokens of per-pixel attribute scores; returns (map, flagged tokens)."""
    if not attr_tokens:
        raise ConfigurationError("ground_attributes needs at least one token")
    v = as_feature_map(v)
    maps, flagged = [], []
    for tok in attr_tokens:
        atom = _attribute_atom(tok, m, table, sim_threshold)
        if atom is None:
            flagged.append(normalize_token(tok))
            maps.append(np.zeros(v.shape[:2]))
        else:
            maps.append(attribute_token_map(atom, v, m))
    return np.mean(maps, axis=0), flagged


def ground_color(color_tokens, v, m, table=None, sim_threshold=DEFAULT_SIM_THRESHOLD):
    """Max over tokens of per-pixel color probabilities; returns (map, flagged tokens)."""
    if not color_tokens:
        raise ConfigurationError("ground_color needs at least one token")
    probs = m.probabilities(v)
    maps, flagged = [], []
    for tok in color_tokens:
        tok = normalize_token(tok)
        idx = None
        if tok in m.color_names:
            idx = m.color_names.index(tok)
        elif table is not None and tok in table:
            best, sim = nearest(table, table.lookup(tok), list(m.color_names), k=1)[0]
            if sim >= sim_threshold:
                idx = m.color_names.index(best)
        if idx is None:
            flagged.append(tok)
            maps.append(np.zeros(probs.shape[:2]))
        else:
            maps.append(probs[:, :, idx])
    return np.max(maps, axis=0), flagged


def merge_maps(me, ma=None, mc=None):
    """``me * (ma + mc)`` clamped to [0, 1]; absent terms are dropped, not zeroed."""
    me = np.asarray(me, dtype=np.float64)
    present = [np.asarray(x, dtype=np.float64) for x in (ma, mc) if x is not None]
    for x in present:
        if x.shape != me.shape:
            raise DimensionError(f"map shapes differ: {me.shape} vs {x.shape}")
    if not present:
        return me.copy()
    return np.clip(me * sum(present), 0.0, 1.0)


@dataclass
class GroundingResult:
    parsed: object
    me: np.ndarray
    ma: np.ndarray | None
    mc: np.ndarray | None
    g: np.ndarray
    boxes: list
    selected: object
    coverage: float | None
    raw_score: float
    region_score: float
    rejected: bool
    flags: list = field(default_factory=list)

    def summary(self):
        return {"parsed": self.parsed.to_dict(),
                "boxes": [b.to_dict() for b in self.boxes],
                "selected": None if self.selected is None else self.selected.to_dict(),
                "coverage": self.coverage, "raw_score": self.raw_score,
                "region_score": self.region_score, "rejected": self.rejected,
                "flags": list(self.flags)}


@dataclass
class Grounder:
    """Parse, ground each part, merge, propose and score one query at a time."""
    table: object
    lexicon: object
    entity: EntityModel
    attribute: AttributeModel | None = None
    color: ColorModel | None = None
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    sim_threshold: float = DEFAULT_SIM_THRESHOLD
    reject_threshold: float = DEFAULT_REJECT_THRESHOLD

    def ground(self, v, query):
        from .evaluation import region_score
        v = as_feature_map(v)
        parsed = parse_query(query, self.lexicon, self.table, self.sim_threshold)
        flags = [f"extra entity: {e}" for e in parsed.extra_entities]
        shape = v.shape[:2]
        if parsed.entity is None or parsed.entity not in self.entity.class_names:
            flags.append(f"entity unavailable: {parsed.entity}")
            me = np.zeros(shape)
        else:
            me = ground_entity(parsed.entity, v, self.entity, self.table)
        ma = mc = None
        if parsed.attributes:
            if self.attribute is None:
                flags.append("no attribute model")
                ma = np.zeros(shape)
            else:
                ma, bad = ground_attributes(parsed.attributes, v, self.attribute, self.table,
                                            self.sim_threshold)
                flags += [f"counterfactual attribute: {t}" for t in bad]
        if parsed.colors:
            if self.color is None:
                flags.append("no color model")
                mc = np.zeros(shape)
            else:
                mc, bad = ground_color(parsed.colors, v, self.color, self.table, self.sim_threshold)
                flags += [f"counterfactual color: {t}" for t in bad]
        g = merge_maps(me, ma, mc)
        cfg = self.proposals
        boxes = nms(heatmap_to_candidates(g, cfg), cfg.nms_iou)
        picked = select_box(boxes, g, cfg.kappa)
        selected, coverage = picked if picked else (None, None)
        raw = region_score(g, selected)
        rejected = selected is None or raw < self.reject_threshold
        if rejected:
            return GroundingResult(parsed, me, ma, mc, g, [], None, None, raw, 0.0, True, flags)
        return GroundingResult(parsed, me, ma, mc, g, boxes, selected, coverage, raw, raw,
                               False, flags)
