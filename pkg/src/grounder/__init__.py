"""Modular textual grounding: entity, attribute and color maps merged into boxes."""
from .embeddings import EmbeddingTable, load_embeddings, nearest
from .grounding import (AttributeModel, ColorModel, EntityModel, Grounder, ground_attributes,
                        ground_color, ground_entity, merge_maps)
from .parser import Lexicon, ParsedQuery, parse_query, resolve_token
from .proposals import Box, ProposalConfig, heatmap_to_candidates, iou, nms, select_box
from .training import TrainConfig, train_attributes, train_color, train_entity

__version__ = "0.1.0"
