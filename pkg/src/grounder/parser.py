"""Keyword-level query decomposition into entity, attribute and color parts."""
import json
import re
from dataclasses import asdict, dataclass, field

from .embeddings import nearest, normalize_token
from .errors import ConfigurationError, EmptyQueryError

DEFAULT_SIM_THRESHOLD = 0.55

STOP_WORDS = frozenset("""
a an the this that these those is are was were be been being am
in on at of to for with by from into onto over under near
and or but nor so than then
who whom whose which what where when why how
it its he she his her him they them their there here
i me my we us our you your
do does did has have had
wearing very some any all each
""".split())

_WORD = re.compile(r"[^\W_]+(?:'[^\W_]+)?")


def tokenize(text):
    return [normalize_token(m.group(0)) for m in _WORD.finditer(normalize_token(text))]


@dataclass(frozen=True)
class Lexicon:
    entity_classes: dict
    attribute_corpus: tuple
    color_names: tuple

    def __post_init__(self):
        ents = {c: tuple(normalize_token(s) for s in syns) for c, syns in self.entity_classes.items()}
        object.__setattr__(self, "entity_classes", ents)
        object.__setattr__(self, "attribute_corpus",
                           tuple(normalize_token(a) for a in self.attribute_corpus))
        object.__setattr__(self, "color_names", tuple(normalize_token(c) for c in self.color_names))
        syn = set(self.synonym_map())
        attrs, colors = set(self.attribute_corpus), set(self.color_names)
        overlap = (syn & attrs) | (syn & colors) | (attrs & colors)
        if overlap:
            raise ConfigurationError(f"lexicon sets overlap on {sorted(overlap)}")

    def synonym_map(self):
        out = {}
        for cls, syns in self.entity_classes.items():
            for s in (normalize_token(cls),) + tuple(syns):
                out.setdefault(s, cls)
        return out

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"entity_classes", "attribute_corpus", "color_names"}
        if unknown:
            raise ConfigurationError(f"unknown lexicon keys {sorted(unknown)}")
        return cls(dict(d["entity_classes"]), tuple(d["attribute_corpus"]), tuple(d["color_names"]))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {"entity_classes": {k: list(v) for k, v in self.entity_classes.items()},
                "attribute_corpus": list(self.attribute_corpus),
                "color_names": list(self.color_names)}

    def check_table(self, table):
        missing = [t for t in list(self.synonym_map()) + list(self.attribute_corpus)
                   + list(self.color_names) if t not in table]
        if missing:
            raise ConfigurationError(f"lexicon tokens missing from embeddings: {missing}")


@dataclass
class ParsedQuery:
    entity: str | None = None
    attributes: list = field(default_factory=list)
    colors: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    entity_tokens: list = field(default_factory=list)
    extra_entities: list = field(default_factory=list)
    matches: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["matches"] = {k: [v[0], v[1]] for k, v in self.matches.items()}
        return d


def resolve_token(token, candidates, table, sim_threshold=DEFAULT_SIM_THRESHOLD):
    """Best cosine match among ``candidates`` if it clears the threshold."""
    token = normalize_token(token)
    cands = [normalize_token(c) for c in candidates]
    if not cands:
        raise ConfigurationError("no candidates to resolve against")
    if token in cands:
        return token, 1.0
    if token not in table:
        return None
    present = [c for c in cands if c in table]
    if not present:
        return None
    best, sim = nearest(table, table.lookup(token), present, k=1)[0]
    return (best, sim) if sim >= sim_threshold else None


def parse_query(text, lexicon, table, sim_threshold=DEFAULT_SIM_THRESHOLD):
    if not (0.0 < sim_threshold <= 1.0):
        raise ConfigurationError(f"sim_threshold must be in (0, 1], got {sim_threshold}")
    if not text or not text.strip():
        raise EmptyQueryError("empty query")
    synonyms = lexicon.synonym_map()
    attrs = set(lexicon.attribute_corpus)
    colors = set(lexicon.color_names)
    out = ParsedQuery()
    entity_hits = []
    for pos, tok in enumerate(t for t in tokenize(text) if t not in STOP_WORDS):
        if tok in synonyms:
            entity_hits.append((1.0, pos, tok, synonyms[tok]))
            continue
        if tok in attrs:
            out.attributes.append(tok)
            continue
        if tok in colors:
            out.colors.append(tok)
            continue
        # similarity fallback; on equal similarity entity beats attribute beats color
        options = []
        for rank, cands in enumerate((list(synonyms), lexicon.attribute_corpus, lexicon.color_names)):
            if cands:
                hit = resolve_token(tok, cands, table, sim_threshold)
                if hit is not None:
                    options.append((-hit[1], rank, hit))
        if not options:
            out.residual.append(tok)
            continue
        _, rank, (match, sim) = min(options)
        out.matches[tok] = (match, sim)
        if rank == 0:
            entity_hits.append((sim, pos, tok, synonyms[match]))
        elif rank == 1:
            out.attributes.append(tok)
        else:
            out.colors.append(tok)
    if entity_hits:
        entity_hits.sort(key=lambda h: (-h[0], h[1]))
        _, _, tok, cls = entity_hits[0]
        out.entity = cls
        out.entity_tokens.append(tok)
        for _, _, other, other_cls in sorted(entity_hits[1:], key=lambda h: h[1]):
            out.residual.append(other)
            out.extra_entities.append(other_cls)
    elif out.attributes:
        out.entity = _infer_entity(out.attributes, synonyms, table, sim_threshold)
    return out


def _infer_entity(attr_tokens, synonyms, table, sim_threshold):
    """Entity implied by attribute words alone ("older man" -> person)."""
    best = None
    for tok in attr_tokens:
        hit = resolve_token(tok, list(synonyms), table, sim_threshold)
        if hit is not None and (best is None or hit[1] > best[0]):
            best = (hit[1], synonyms[hit[0]])
    return None if best is None else best[1]
