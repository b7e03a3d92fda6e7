"""Multi-view alignment of text-attributed graphs.

Neighbourhoods are rendered as hierarchical text documents, embedded with a
text encoder, and used to supervise a GNN whose embeddings can then classify
nodes against label texts without labelled training data.
"""

from .alignment import TofgTable, build_views, negative_loss, positive_loss, total_loss, train
from .checkpoint import Checkpoint
from .config import EvalConfig, RunConfig, TrainConfig, ViewConfig
from .embeddings import EmbeddingCache, HashProvider, ProviderDescriptor, RemoteProvider, cosine, hash_embed
from .gnn import GnnParameters, backward, forward, init_params
from .graph import EgoGraph, NodeRecord, TextAttributedGraph, build_ego_graph, k_hop_neighborhood, load_graph
from .graph2text import DocumentText, HierarchicalDocument, flat_edge_listing, layout, parse, render
from .inference import few_shot_fit, label_embeddings, node_embedding, node_embeddings, zero_shot
from .walks import WalkConfig, WalkPath, sample_walk, walk_corpus, walk_subdocument

__version__ = "0.1.0"
