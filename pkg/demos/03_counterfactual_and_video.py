"""The counterfactual ROC protocol on hand-made scores, then per-frame video helpers.

Run:  python demos/03_counterfactual_and_video.py
"""
# %% imports
import numpy as np

from grounder.evaluation import (ImageAnnotation, align_captions, generate_counterfactual_queries,
                                 generate_normal_queries, roc_auc, temporal_ground)

# %% Queries: each absent corpus word becomes one counterfactual query.
corpus = ["man", "woman", "red", "green", "blue"]
anns = [ImageAnnotation("a.fmap", "person", ("man",), ("red",), (2, 2, 5, 6)),
        ImageAnnotation("b.fmap", "dog", (), ("blue",), (8, 1, 4, 4))]
for case in generate_normal_queries(anns, corpus):
    print("normal        ", case.query)
for case in generate_counterfactual_queries(anns, corpus):
    print("counterfactual", case.query)

# %% A resilient grounder scores counterfactual queries low; the ROC measures the gap.
rng = np.random.default_rng(1)
normal = np.clip(rng.normal(0.85, 0.1, 60), 0, 1)
cf = np.clip(rng.normal(0.25, 0.2, 140), 0, 1)
rep = roc_auc(normal, cf)
print(f"\nAUC {rep.auc:.3f} over {len(rep.thresholds)} thresholds")
for f, t, thr in list(zip(rep.fpr, rep.tpr, rep.thresholds))[::40]:
    print(f"  thr {thr:5.2f}  fpr {f:.2f}  tpr {t:.2f}")

# %% Video: frames whose region score clears a threshold form segments.
frames = np.concatenate([rng.uniform(0, 0.3, 10), rng.uniform(0.7, 1, 6), rng.uniform(0, 0.3, 4),
                         rng.uniform(0.7, 1, 2), rng.uniform(0, 0.3, 5)])
print("\nsegments (min_len 3):", temporal_ground(frames, 0.5, min_len=3))
print("segments (min_len 1):", temporal_ground(frames, 0.5, min_len=1))

# %% Captions to frames: argmax lets captions share; greedy-unique does not.
scores = np.array([[0.9, 0.6, 0.1, 0.0],
                   [0.8, 0.2, 0.7, 0.1],
                   [0.1, 0.2, 0.3, 0.4]])
print("\nargmax       ", align_captions(scores, "argmax"))
print("greedy-unique", align_captions(scores, "greedy-unique"))
