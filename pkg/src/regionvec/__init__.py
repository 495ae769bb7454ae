"""Multi-view urban region embeddings.

Learns one d-dimensional vector per city region from several data views
(geographic adjacency, POI mix, origin-destination flows, binned
demographics) by multi-task pretraining on a heterogeneous region graph,
then evaluates the vectors as the sole input of Ridge regressions on
downstream prediction tasks.
"""

from .data import Dataset, DataError, MissingFileError, load_dataset, validate
from .divergence import js, kl, normalize, similarity_matrix
from .downstream import EvalConfig, evaluate, kfold_split, metrics, ridge_fit, sweep
from .graph import GraphConfig, HeteroGraph, build, topk_edges
from .model import HyperParams, forward, init_params
from .synth import SynthSpec, generate_city
from .training import TrainConfig, TrainResult, export_embeddings, import_embeddings, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DataError", "MissingFileError", "load_dataset", "validate",
    "js", "kl", "normalize", "similarity_matrix",
    "EvalConfig", "evaluate", "kfold_split", "metrics", "ridge_fit", "sweep",
    "GraphConfig", "HeteroGraph", "build", "topk_edges",
    "HyperParams", "forward", "init_params",
    "SynthSpec", "generate_city",
    "TrainConfig", "TrainResult", "export_embeddings", "import_embeddings", "train",
    "__version__",
]
