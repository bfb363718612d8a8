"""Certainty-ratio face image quality assessment on dense embedding models."""

from .classifiability import (ClassifiabilityRecord, batch_classifiability, ccs,
                              certainty_ratio, classifiability_from_cosines, nnccs)
from .estimator import CRFIQA
from .evaluation import (ErcCurve, comparison_scores, erc_auc, erc_curve,
                         fmr_at_threshold, fnmr_at_threshold, normalize_scores, pair_quality,
                         reject_grid, spearman, threshold_at_fmr, weighted_template_aggregate)
from .exceptions import *  # noqa: F401,F403
from .geometry import cos_add_margin, cosine_similarity, l2_normalize, pairwise_cosine
from .losses import LossConfig, arcface_loss, combined_loss, smooth_l1
from .model import (BackboneConfig, ModelState, backward, embed, forward, forward_batch,
                    init_state, load_checkpoint, predict_quality, save_checkpoint)
from .synthdata import (PairList, SyntheticDataset, SyntheticSpec, all_pairs, generate,
                        make_pairs, make_templates, split_holdout)
from .trainer import SGD, StepReport, TrainConfig, train, train_on_top, train_step

__version__ = "0.1.0"
