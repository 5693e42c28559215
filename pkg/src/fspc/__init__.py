"""Few-shot point cloud classification with cross-instance adaptation.

A numpy library covering the full episodic pipeline: synthetic point cloud
pools, N-way K-shot sampling, permutation-invariant embedding backbones,
channel-interaction and cross-instance fusion of prototype/query features,
a squared-distance softmax head, and a reproducible training engine with
finite-difference gradient verification.
"""

from .data import (
    AugmentationConfig,
    LabeledExample,
    PointCloud,
    SplitManifest,
    augment,
    build_synthetic_pool,
    bundled_manifest,
    chamfer_distance,
    generate_synthetic_class,
    load_examples,
    load_manifest,
    normalize_cloud,
    sample_points,
    validate_split,
    write_examples,
)
from .episodes import Episode, EpisodeSpec, episode_seed, episode_stream, sample_episode
from .backbones import BackboneConfig, embed, init_backbone, knn_graph, edgeconv_layer
from .cia import (
    CiaParameters,
    cia_forward,
    cif_fuse,
    cosine_topk,
    init_cia,
    sci_forward,
)
from .protohead import classify, compute_prototypes, episode_accuracy, episode_loss
from .training import (
    Adam,
    Model,
    OptimizerConfig,
    RunReport,
    TrainConfig,
    build_model,
    cross_validate,
    desk_profile,
    evaluate,
    fit,
    grad_check,
    lr_at,
    paper_profile,
    train_episode,
)
from .errors import DataError, FspcError, NumericError

__version__ = "0.1.0"
