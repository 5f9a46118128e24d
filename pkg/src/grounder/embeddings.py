"""Fixed word embeddings in GloVe plain-text format."""
import os
import logging
import unicodedata

import numpy as np

from .errors import FormatError, NotFoundError

log = logging.getLogger(__name__)


def normalize_token(token):
    return unicodedata.normalize("NFC", token).lower()


class EmbeddingTable:
    """Immutable token -> vector store. ``dim`` is 0 for an empty table."""

    def __init__(self, entries=None, dim=None):
        self._entries = {}
        for tok, vec in (entries or {}).items():
            tok = normalize_token(tok)
            if not tok:
                raise FormatError("empty token")
            vec = np.asarray(vec, dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            if vec.shape != (dim,) or not np.all(np.isfinite(vec)):
                raise FormatError(f"bad vector for token {tok!r}")
            if tok not in self._entries:
                vec = vec.copy()
                vec.setflags(write=False)
                self._entries[tok] = vec
        self.dim = dim or 0

    def __len__(self):
        return len(self._entries)

    def __contains__(self, token):
        return normalize_token(token) in self._entries

    def tokens(self):
        return list(self._entries)

    def lookup(self, token):
        key = normalize_token(token)
        try:
            return self._entries[key]
        except KeyError:
            raise NotFoundError(f"token {token!r} not in embedding table") from None

    def nearest(self, query, candidates, k=1):
        return nearest(self, query, candidates, k)


def load_embeddings(stream):
    """Parse ``token v1 ... vd`` lines from a text stream or a file path."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, encoding="utf-8") as fh:
            return load_embeddings(fh)
    entries = {}
    dim = None
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        parts = line.split(" ")
        token = normalize_token(parts[0])
        if not token:
            raise FormatError(f"line {lineno}: empty token")
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise FormatError(f"line {lineno}: unparseable float") from None
        if dim is None:
            dim = len(values)
        if len(values) != dim or dim == 0:
            raise FormatError(f"line {lineno}: expected {dim} values, found {len(values)}")
        if token in entries:
            log.warning("duplicate token %r at line %d ignored", token, lineno)
            continue
        entries[token] = np.array(values, dtype=np.float64)
    return EmbeddingTable(entries, dim=dim)


def cosine(a, b):
    """Cosine similarity; 0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def nearest(table, query, candidates, k=1):
    """Top-k candidates by cosine similarity, ties in lexicographic token order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = []
    for tok in dict.fromkeys(normalize_token(c) for c in candidates):
        scored.append((tok, cosine(query, table.lookup(tok))))
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return scored[:k]
