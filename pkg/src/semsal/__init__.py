"""Two-stage salient object detection.

Stage one learns a pairwise semantic ranker over object proposals from
weak, automatically generated labels and uses it to localize the salient
objects of an image.  Stage two fuses off-the-shelf candidate saliency maps
inside the localized region, weighting each map by its agreement with the
coarse object mask.
"""

from .dataio import (BBox, Dataset, FeatureStore, ImageRecord, ObjectProposal,
                     RankerCheckpoint, load_checkpoint, load_manifest,
                     read_feature_blob, read_map, read_mask, save_checkpoint,
                     write_feature_blob, write_map)
from .errors import FormatError, SemsalError, TrainingError, ValidationError
from .fusion import FusionConfig, confidence, confidence_matrix, fuse
from .localization import (ScoreTable, coarse_mask, localize, score_proposals,
                           select_salient_count, win_counts)
from .metrics import (MetricConfig, e_measure, evaluate_dataset, f_measure,
                      localization_prf, mae, s_measure)
from .pairs import (PairConfig, TrainingSet, enumerate_pairs, gt_coverage_label,
                    model_saliency_score, multiscale_feature, pair_label)
from .proposals import FilterConfig, enlarge, filter_proposals, iou
from .ranker import (RankerModel, SaliencyRanker, TrainConfig, batch_gradient,
                     forward, hinge_loss, init_model, pair_gradient,
                     train_ranker)
from .retrieval import RetrievalConfig, retrieve_all, retrieve_hybrid
from .synthetic import SyntheticConfig, generate_fixture, make_ranking_pairs

__version__ = "0.1.0"

__all__ = [
    "BBox", "Dataset", "FeatureStore", "ImageRecord", "ObjectProposal",
    "RankerCheckpoint", "load_checkpoint", "load_manifest",
    "read_feature_blob", "read_map", "read_mask", "save_checkpoint",
    "write_feature_blob", "write_map",
    "FormatError", "SemsalError", "TrainingError", "ValidationError",
    "FusionConfig", "confidence", "confidence_matrix", "fuse",
    "ScoreTable", "coarse_mask", "localize", "score_proposals",
    "select_salient_count", "win_counts",
    "MetricConfig", "e_measure", "evaluate_dataset", "f_measure",
    "localization_prf", "mae", "s_measure",
    "PairConfig", "TrainingSet", "enumerate_pairs", "gt_coverage_label",
    "model_saliency_score", "multiscale_feature", "pair_label",
    "FilterConfig", "enlarge", "filter_proposals", "iou",
    "RankerModel", "SaliencyRanker", "TrainConfig", "batch_gradient",
    "forward", "hinge_loss", "init_model", "pair_gradient", "train_ranker",
    "RetrievalConfig", "retrieve_all", "retrieve_hybrid",
    "SyntheticConfig", "generate_fixture", "make_ranking_pairs",
]
