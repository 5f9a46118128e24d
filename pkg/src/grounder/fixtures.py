"""Synthetic data: a toy embedding table, a lexicon and planted-blob feature maps.

Feature maps have 16 channels. Channels 0-2 carry pixel RGB, the rest carry
"semantic" features: background pixels are noise, pixels inside the planted
box add an entity prototype and, for persons, a gender prototype.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable
from .evaluation import ImageAnnotation
from .io import write_fmap
from .parser import Lexicon
from .training import Record, write_manifest

EMBED_DIM = 16
MAP_SIZE = 16
N_CHANNELS = 16
ENTITIES = ("person", "dog")
ATTRIBUTES = ("man", "woman")
COLORS = ("red", "green", "blue")
RGB = {"red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0)}

# semantic axes of the toy embedding space
_AX = {"person": 0, "animal": 1, "male": 2, "female": 3, "old": 4, "young": 5,
       "red": 6, "green": 7, "blue": 8, "clothing": 9, "object": 10, "colorness": 11,
       "dark": 12, "plant": 13}
_WORDS = {
    "person": {"person": 1.0},
    "people": {"person": 1.0},
    "human": {"person": 1.0},
    "dog": {"animal": 1.0},
    "puppy": {"animal": 1.0, "young": 0.4},
    "man": {"person": 0.8, "male": 1.0},
    "woman": {"person": 0.8, "female": 1.0},
    "boy": {"person": 0.8, "male": 0.8, "young": 0.6},
    "girl": {"person": 0.8, "female": 0.8, "young": 0.6},
    "old": {"old": 1.0, "person": 0.3},
    "older": {"old": 1.0, "person": 0.25},
    "young": {"young": 1.0, "person": 0.3},
    "red": {"red": 1.0, "colorness": 0.6},
    "green": {"green": 1.0, "colorness": 0.6},
    "blue": {"blue": 1.0, "colorness": 0.6},
    "navy": {"blue": 0.9, "colorness": 0.6, "dark": 0.4},
    "crimson": {"red": 0.9, "colorness": 0.6, "dark": 0.3},
    "shirt": {"clothing": 1.0, "person": 0.2},
    "car": {"object": 1.0},
    "tree": {"plant": 1.0},
}


def fixture_embeddings(seed=0, noise=0.05):
    rng = np.random.default_rng([seed, 101])
    entries = {}
    for word, axes in _WORDS.items():
        v = rng.normal(0.0, noise, EMBED_DIM)
        for ax, val in axes.items():
            v[_AX[ax]] += val
        entries[word] = np.round(v, 6)
    return EmbeddingTable(entries)


def embeddings_text(table):
    lines = []
    for tok in table.tokens():
        vals = " ".join(f"{x:.6f}" for x in table.lookup(tok))
        lines.append(f"{tok} {vals}")
    return "\n".join(lines) + "\n"


def fixture_lexicon():
    return Lexicon({"person": ["person", "people", "human"], "dog": ["dog", "puppy"]},
                   ("man", "woman", "boy", "girl", "old", "young"),
                   ("red", "green", "blue"))


@dataclass
class BlobImage:
    features: np.ndarray  # (H, W, C) float32
    color_labels: np.ndarray  # (H, W) int, -1 outside the blob
    annotation: ImageAnnotation


def _prototypes(seed):
    rng = np.random.default_rng([seed, 202])
    q, _ = np.linalg.qr(rng.normal(size=(N_CHANNELS - 3, 4)))
    protos = 1.5 * q.T
    return {"person": protos[0], "dog": protos[1], "man": protos[2], "woman": protos[3]}


def make_blob_images(n=200, seed=0, size=MAP_SIZE, bg_noise=0.3, fg_noise=0.3):
    """Balanced persons/dogs, persons split man/woman, colors drawn uniformly."""
    protos = _prototypes(seed)
    rng = np.random.default_rng([seed, 303])
    entities = np.array(["person", "dog"] * (n // 2) + ["person"] * (n % 2))
    rng.shuffle(entities)
    images = []
    person_count = 0
    for i in range(n):
        ent = str(entities[i])
        color = COLORS[rng.integers(len(COLORS))]
        w, h = int(rng.integers(4, 8)), int(rng.integers(4, 8))
        x, y = int(rng.integers(0, size - w + 1)), int(rng.integers(0, size - h + 1))
        v = np.empty((size, size, N_CHANNELS))
        v[:, :, :3] = 0.5 + rng.normal(0.0, 0.05, (size, size, 3))
        v[:, :, 3:] = rng.normal(0.0, bg_noise, (size, size, N_CHANNELS - 3))
        sem = protos[ent].copy()
        attrs = ()
        if ent == "person":
            gender = ATTRIBUTES[person_count % 2]
            person_count += 1
            sem += protos[gender]
            attrs = (gender,)
        v[y:y + h, x:x + w, :3] = np.asarray(RGB[color]) + rng.normal(0.0, 0.05, (h, w, 3))
        v[y:y + h, x:x + w, 3:] = sem + rng.normal(0.0, fg_noise, (h, w, N_CHANNELS - 3))
        labels = -np.ones((size, size), dtype=np.int64)
        labels[y:y + h, x:x + w] = COLORS.index(color)
        ann = ImageAnnotation("", ent, attrs, (color,), (x, y, w, h))
        images.append(BlobImage(v.astype(np.float32), labels, ann))
    return images


def make_color_patches(n=40, seed=0, size=8, noise=0.05):
    """Images made of pure color quadrants, every pixel labelled."""
    rng = np.random.default_rng([seed, 404])
    out = []
    for _ in range(n):
        lab = rng.integers(0, len(COLORS), size=(2, 2)).repeat(size // 2, 0).repeat(size // 2, 1)
        rgb = np.array([RGB[c] for c in COLORS])[lab] + rng.normal(0.0, noise, (size, size, 3))
        out.append((rgb.astype(np.float32), lab))
    return out


def write_blob_fixture(root, n=200, n_heldout=40, seed=0):
    """Write feature/label FMAPs, train/held-out manifests, lexicon and embeddings.

    Returns a dict of paths plus the held-out annotations.
    """
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(exist_ok=True)
    images = make_blob_images(n, seed)
    records = []
    for i, img in enumerate(images):
        fpath = root / "features" / f"{i:03d}.fmap"
        lpath = root / "labels" / f"{i:03d}.fmap"
        write_fmap(fpath, img.features)
        write_fmap(lpath, img.color_labels.astype(np.float32))
        img.annotation.features_path = str(fpath)
        a = img.annotation
        records.append(Record(str(fpath), a.entity, a.attributes, a.colors, str(lpath), a.box))
    train, heldout = records[:n - n_heldout], records[n - n_heldout:]
    write_manifest(root / "train.jsonl", train)
    write_manifest(root / "heldout.jsonl", heldout)
    lex = fixture_lexicon()
    (root / "lexicon.json").write_text(json.dumps(lex.to_dict(), indent=2) + "\n", encoding="utf-8")
    (root / "glove.txt").write_text(embeddings_text(fixture_embeddings(seed)), encoding="utf-8")
    return {"root": root, "train": root / "train.jsonl", "heldout": root / "heldout.jsonl",
            "lexicon": root / "lexicon.json", "embeddings": root / "glove.txt",
            "images": images, "train_records": train, "heldout_records": heldout}
