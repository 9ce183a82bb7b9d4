"""Point cloud compression with a folding autodecoder trained through approximate QAP matchings."""

__version__ = "0.1.0"

from .pointcloud import (Dataset, PointCloud, SampleSpec, gen_synthetic, load_cloud,
                         load_dataset, save_cloud, synthetic_dataset, uniform_sample_indices)
from .kdpartition import KdPartition, build_partition, leaf_pair_iter
from .lap import AuctionSolution, auction_assign, hungarian_assign
from .metrics import (MetricReport, aug_chamfer, chamfer, emd_exact_mean, emkd,
                      normalized_log_aug_chamfer, sampling_normalizer)
from .matching import MatchingState, QapWeights, qaad_greedy, qaad_reassignment, qap_energy
from .autodecoder import (AdamState, FoldingNet, NetConfig, adam_step, backward, forward,
                          init_network, load_checkpoint, reconstruct, save_checkpoint)
from .trainer import TrainConfig, TrainReport, TrainState, loss_aligned, loss_aug_chamfer_sample, train
from .experiments import ChamferStudyConfig, chamfer_study, evaluate_emkd
