"""Train the three grounding modules on the planted-blob fixture and ground a few queries.

Run:  python demos/02_train_and_ground.py [output_dir]

Takes about a minute and a half on one CPU core. Heatmaps are written as PGM.
"""
# %% imports
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from grounder import Grounder, ProposalConfig, TrainConfig, train_attributes, train_color, train_entity
from grounder.embeddings import load_embeddings
from grounder.fixtures import ATTRIBUTES, COLORS, ENTITIES, fixture_lexicon, write_blob_fixture
from grounder.io import write_pgm

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="grounder-"))
fx = write_blob_fixture(out / "fixture")
table = load_embeddings(fx["embeddings"])
print("fixture written to", fx["root"])

# %% Training: image-level labels only for entities and attributes.
cfg = TrainConfig(seed=0)
t0 = time.perf_counter()
entity = train_entity(fx["train_records"], ENTITIES, table, cfg)
t1 = time.perf_counter()
attribute = train_attributes(fx["train_records"], ATTRIBUTES, table, cfg)
t2 = time.perf_counter()
color = train_color(fx["train_records"], COLORS, cfg)
print(f"trained: entity {t1 - t0:.0f}s, attributes {t2 - t1:.0f}s, "
      f"color {time.perf_counter() - t2:.1f}s")

# %% Ground a positive and a counterfactual query on one held-out person.
g = Grounder(table, fixture_lexicon(), entity, attribute, color, ProposalConfig())
img = next(im for im in fx["images"][160:] if im.annotation.attributes)
ann = img.annotation
other = next(a for a in ATTRIBUTES if a not in ann.attributes)
for query in (f"the {ann.attributes[0]} person in {ann.colors[0]}", f"the {other} person"):
    res = g.ground(img.features, query)
    print(f"\nquery: {query!r}")
    print("  parsed:", res.parsed.entity, res.parsed.attributes, res.parsed.colors)
    print("  planted box:", ann.box, " selected:",
          None if res.selected is None else (res.selected.x, res.selected.y, res.selected.w,
                                             res.selected.h))
    print(f"  raw score {res.raw_score:.3f}  rejected={res.rejected}")
    stem = query.replace(" ", "_")
    write_pgm(out / f"{stem}.me.pgm", res.me)
    write_pgm(out / f"{stem}.g.pgm", res.g)

# %% The entity map on its own, thresholded, against the planted rectangle.
me = res.me >= 0.5
x, y, w, h = ann.box
truth = np.zeros_like(me)
truth[y:y + h, x:x + w] = True
print(f"\nentity mask IoU with planted box: {(me & truth).sum() / (me | truth).sum():.2f}")
print("heatmaps in", out)
