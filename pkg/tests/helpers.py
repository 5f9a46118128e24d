"""Small hand-built models shared by the grounding and CLI tests."""
import numpy as np

from grounder import layers as L
from grounder.dictionary import AttributeDictionary, identity_transforms
from grounder.grounding import AttributeModel, ColorModel, EntityModel
from grounder.sketch import AttentionHeadParams, init_attention_head, make_sketch_params


def zeroed(head):
    return AttentionHeadParams([L.Dense(np.zeros_like(d.weight), np.zeros_like(d.bias),
                                        d.activation) for d in head.layers])


def entity_model(table, channels, classes=("person", "dog"), seed=0, sketch_dim=16, zero=False):
    rng = np.random.default_rng(seed)
    head = init_attention_head(rng, sketch_dim, (8,))
    if zero:
        head = zeroed(head)
    return EntityModel(make_sketch_params(seed + 1, table.dim, sketch_dim),
                       make_sketch_params(seed + 2, channels, sketch_dim), head,
                       rng.normal(size=(len(classes), channels)).astype(np.float32),
                       np.zeros(len(classes), np.float32), classes)


def attribute_model(table, names, seed=0, sketch_dim=16):
    """Zero attention head (R = 0.5) and identity latent transforms over the word space."""
    rng = np.random.default_rng(seed)
    head = zeroed(init_attention_head(rng, sketch_dim, (8,)))
    return AttributeModel(make_sketch_params(seed + 1, table.dim, sketch_dim),
                          make_sketch_params(seed + 2, table.dim, sketch_dim), head,
                          AttributeDictionary.from_table(table, names), identity_transforms())


def rgb_color_model(names=("red", "green", "blue"), gain=10.0):
    """Linear softmax classifier whose logits are ``gain * rgb``."""
    return ColorModel([L.Dense(gain * np.eye(3), np.zeros(3), "identity")], names, (0, 3))
