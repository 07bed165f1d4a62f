"""Place-recognition toolkit: pose-based pair mining, descriptor aggregation,
visual/structural fusion, triplet training utilities and Recall@K evaluation."""

from .aggregators import Variant, aggregate, conv_ap, eigenplaces, gem, mixvpr, netvlad, spoc
from .dataset_graph import balanced_split, build_graph, connected_components, scene_similarity
from .errors import DegenerateInputError, FormatError, InvalidInputError, TrainingDivergedError
from .fusion import (FusionWeights, HardMinerState, LossConfig, MiniBatch, fuse, head_loss, multi_head_loss,
                     select_negatives, triplet_loss, update_miner)
from .geometry import (Condition, Difficulty, PairSet, SampleMeta, classify_difficulty, image_position,
                       mine_pairs, vector_angle)
from .gradcheck import ParamVector, numeric_gradient
from .retrieval import DescriptorDB, RecallReport, recall_at_k, top_k

__version__ = "0.1.0"
