"""Confidence-aware active learning for heteroscedastic regression."""

from .acquisition import StrategyKind, caal_score, minmax_normalize, select_topB
from .aerosol import coating_volume_ratio, mixing_state_index
from .bench import data_to_match, r_squared, rmse
from .config import ExperimentConfig, load_config
from .ensemble import Ensemble, EnsembleConfig, embed, predict, train_ensemble
from .loop import run_experiment
from .net import HeteroNet, TrainSchedule, backward, forward, train_member
from .objective import ObjectiveKind

__version__ = "0.1.0"
