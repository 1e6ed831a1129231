"""Communication-efficient, fairness-aware federated matrix factorization."""

__version__ = "0.1.0"

from .dataset import (Partition, RatingDataset, load_movielens, make_synthetic,
                      restrict_seed_items, split, write_movielens)
from .factor import FactorModel, Hyperparams, init_model
from .fairness import GroupPartition, compute_ldap, fairmf, identify_groups
from .metrics import RoundTrace, comm_cost, group_rmse, rmse
from .protocol import run_central_mf, run_training, sample_clients
from .experiments import ExperimentPlan, RunSpec, run_plan
