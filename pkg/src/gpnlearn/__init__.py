"""Bayesian structure learning for Gaussian process networks.

DAGs are sampled by MCMC under a Laplace-approximated GP score, rescored
with bridge-sampling estimates of the marginal likelihood and importance
reweighted toward the exact posterior.
"""

from .dag import Cpdag, Dag, DagError, enumerate_dags, is_acyclic, sample_erdos_renyi, to_cpdag
from .gp import LocalGP, OptConfig, PriorSpec, laplace_log_score, log_joint, map_estimate
from .bridge import BridgeConfig, SamplerError, bridge_log_ml, bridge_local_score
from .bge import BgeParams, BgeScorer, bge_local_score
from .scores import GPSettings, LocalScorer, ScoreEntry, exact_local_score
from .cache import ScoreCache, score_cache_get_or_compute
from .tables import GraphPrior, ScoreTable, build_score_table, dag_log_posterior
from .samplers import order_mcmc, partition_mcmc, sample_dag_given_order, structure_mcmc
from .inference import (
    FeatureQuery,
    WeightedDagSample,
    estimated_dag_posterior,
    exact_posterior,
    feature_posterior,
    rescore_unique,
)
from .metrics import EvalReport, expected_shd, reverse_kl, shd, tpr_fprp
from .synth import Dataset, GroundTruth, SynthConfig, generate, load_csv

__version__ = "0.1.0"
