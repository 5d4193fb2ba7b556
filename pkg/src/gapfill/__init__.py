"""Gap filling for cloud-masked raster time series: learned variational solvers, DInEOF and a direct network."""
from .dineof import DineofConfig, cross_validate, impute
from .direct import DirectNet, DirectNetConfig
from .errors import ConfigError, Diverged, FieldError, FormatError, GapfillError
from .field import GappyField, NormStats, SplitSpec, compute_stats, denormalize, normalize, read_gfd, select_frames, write_gfd
from .metrics import MetricsReport, evaluate, monthly_mean, relative_error, rmsle
from .obs_sim import CloudMaskConfig, SyntheticTruthConfig, gen_cloud_mask, gen_truth, simulate_observations
from .tiling import merge, plan_tiles, tile_infer
from .training import TrainConfig, train, train_direct
from .variational import SolverSpec, VariationalModel, build_model, cost, grad_cost, infer, make_prior, solve

__version__ = "0.1.0"
