"""Multi-label few-shot attribute-value classification with label-enhanced
prototypes, hybrid attention and a dynamic decision threshold."""
from .backend import BACKEND
from .corpus import Corpus, CorpusStats, LabelCatalogEntry, Product, build_corpus, corpus_stats, load_corpus
from .embedder import EmbeddingStore, HashEncoder, load_embedding_store, write_embedding_store
from .errors import DataError, InsufficientDataError, KeafError, NumericalError
from .head import Ablation, HeadParams, forward_episode, grad_episode, init_params
from .metrics import EvalReport
from .sampler import Episode, EpisodeSpec, filter_corpus, sample_episode, split_train_test
from .threshold import ThresholdState, compute_threshold, infer_labels, select_test_threshold
from .trainer import AdamW, TrainConfig, TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Ablation",
    "AdamW",
    "Corpus",
    "CorpusStats",
    "DataError",
    "EmbeddingStore",
    "Episode",
    "EpisodeSpec",
    "EvalReport",
    "HashEncoder",
    "HeadParams",
    "InsufficientDataError",
    "KeafError",
    "LabelCatalogEntry",
    "NumericalError",
    "Product",
    "ThresholdState",
    "TrainConfig",
    "TrainResult",
    "build_corpus",
    "compute_threshold",
    "corpus_stats",
    "evaluate",
    "filter_corpus",
    "forward_episode",
    "grad_episode",
    "infer_labels",
    "init_params",
    "load_corpus",
    "load_embedding_store",
    "sample_episode",
    "select_test_threshold",
    "split_train_test",
    "train",
    "write_embedding_store",
]
