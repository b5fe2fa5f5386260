"""Desk-scale person re-identification toolkit.

A small numpy library built around four pieces: a reverse-mode autodiff
tensor engine, gated factor-module backbones with a two-scale consensus
model on top, a seeded augmentation and synthetic-dataset pipeline, and
single-query CMC/mAP retrieval evaluation.
"""

from .augment import (AugmentConfig, color_jitter, color_pca_augment,
                      compose_pipeline, load_png, random_crop, random_erasing,
                      random_flip, resize_bilinear, resize_for_scales,
                      rgb_covariance_eig, save_png, validate_image)
from .backbone import (Backbone, BackboneConfig, Classifier, DenseFactorModule,
                       FactorBlock, FactorModule, FusionHead, GateModule,
                       ScaleBranch, full_scale_config, toy_config)
from .checks import run_gradcheck_suite
from .consensus import ConsensusConfig, ConsensusNet, ForwardResult, default_pooling
from .data import (DatasetSplit, PersonImageRecord, SynthConfig, batch_sampler,
                   export_split, generate_synthetic, label_mapping,
                   load_directory, load_flat_directory, parse_image_name)
from .errors import (CheckpointError, ConfigError, ContractError, DataLoadError,
                     DimensionError, LabelError, NumericError)
from .metrics import (EmbeddingGallery, EvalReport, average_precision, cmc_curve,
                      evaluate, evaluate_embeddings, extract_gallery,
                      load_embeddings, pairwise_distances, rank_gallery,
                      save_embeddings, save_per_query_ap, self_retrieval_report)
from .optim import GradCheckReport, Parameter, adam_step, grad_check
from .rng import Rng
from .tensor import (Tensor, activation, backward, concat, conv2d, default_dtype,
                     matmul, no_grad, pool2d_global, relu, reshape,
                     set_default_dtype, set_finite_checks, sigmoid,
                     softmax_cross_entropy)
from .train import (EpochStats, TrainConfig, TrainLog, fit, load_checkpoint,
                    save_checkpoint, train_epoch)

__version__ = "0.1.0"
