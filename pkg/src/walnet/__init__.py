"""WAL-Net: weakly supervised auxiliary-task learning for plaque classification.

A classification network whose auxiliary weakly supervised segmentation task
is driven by attention/superpixel pseudo-masks (PGM) and fed back through ROI
cropping of the classification features (RCM).
"""

from .imaging import (BBox, binarize, felzenszwalb_segment, minmax_normalize,
                      resize_bilinear)
from .data import (CLASS_NAMES, SampleRecord, SyntheticSpec, generate_synthetic,
                   load_dataset, preprocess, save_dataset, split)
from .losses import LossBundle, classification_loss, segmentation_loss, total_loss
from .metrics import MetricsReport, compute_metrics, confusion_matrix, dice_coefficient
from .model import (ModelConfig, ModelOutput, WalNet, architecture_hash,
                    load_checkpoint, save_checkpoint)
from .pgm import (AttentionSet, PgmConfig, PseudoMask, SuperpixelCache,
                  fuse_attention, generate_pseudo_mask, superpixel_region_average)
from .rcm import (RoiParams, STRATEGIES, apply_roi_strategy, crop_roi_features,
                  dilate_and_clamp, mask_to_bbox)
from .training import (TrainConfig, TrainResult, evaluate, run_ablation,
                       run_experiment, run_roi_comparison, train)

__version__ = "0.1.0"
