"""Personalized multi-faceted trust modeling for review networks."""

from .clustering import ClusterAssignment, cluster_kmeans_modified, greedy_partition, random_partition
from .dataset import Agent, Dataset, Item, filter_by_activity, load_dataset
from .errors import ContractError, DataError, NumericalError
from .indicators import IndicatorVector, compute_indicators, indicator_vector
from .pipeline import ExperimentSpec, Report, emit_report, run_experiment, sweep_parameter
from .recommend import MtrConfig, TrustMfConfig, mtr_predict_rating, trustmf_fit
from .similarity import Kind, SimilarityMatrix, pairwise_similarity, pref_sim, social_sim
from .synthetic import SynthConfig, generate_synthetic
from .trustlink import LinkTarget, TrustPredictionMatrix

__version__ = "0.1.0"
