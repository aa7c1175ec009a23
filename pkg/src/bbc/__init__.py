"""Post-train black-box defense: Bayesian heads appended to a frozen classifier."""
from .attacks import ThreatModel, eot_pgd, fgsm, pgd, score_query_attack
from .data import Dataset, gen_data
from .distances import DistanceFn, FeatureExtractor, SkeletonTopology
from .energy import EnergyView
from .ensemble import BbcEnsemble, BbcTrainConfig, predict_bma, train
from .errors import BBCError, ConfigError, ContractError, DimensionError, NumericError
from .models import TrainConfig, VictimClassifier, freeze, train_victim

__version__ = "0.1.0"
