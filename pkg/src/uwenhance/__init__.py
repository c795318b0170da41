"""Perception-guided underwater image enhancement.

A prompt-pair quality model over a frozen vision-language backbone
supplies perception scores; those scores drive a hinge loss and a
curriculum-weighted contrastive regularizer on top of plain pixel L1 for
training an enhancement network against classical-baseline negatives.
"""

__version__ = "0.1.0"

from .backbones import (FeaturePyramid, RealClipBackbone, StubClipBackbone,
                        StubFeatureExtractor, VggFeatureExtractor,
                        create_clip_backbone, create_feature_extractor)
from .config import RunConfig, config_to_dict, config_to_yaml, load_config, validate_config
from .data import DatasetManifest, ingest_dataset, load_manifest, save_manifest
from .enhancer import EnhancerHandle, ReferenceCnn, create_enhancer, enhance, load_enhancer, save_enhancer
from .errors import (CheckpointCorruptError, CheckpointMissingError, ConfigError, DataError,
                     DegenerateBatchError, NonFiniteLossError, NumericError,
                     ShapeMismatchError, UwenhanceError, ZeroVarianceError)
from .losses import (CrConfig, CurriculumWeights, LossReport, LossWeights,
                     classify_negatives, clip_perception_loss, contrastive_regularization,
                     pixel_l1, total_loss)
from .metrics import MetricReport, evaluate_dataset, plcc, psnr, srocc, ssim, uciqe, uiqm
from .negatives import (GeneratorSpec, NegativeSet, build_negative_set, dark_channel_prior,
                        histogram_equalize, ibla_restore, underwater_dcp)
from .perception import (MosSample, PerceptionModelState, PerceptionScore, PromptPair,
                         QaTrainConfig, evaluate_perception_model, init_prompt_pair,
                         load_perception_model, perception_score, prompt_loss,
                         save_perception_model, score_images, train_perception_model)
from .trainer import TrainPair, TrainingRunRecord, UieTrainConfig, train_enhancer
