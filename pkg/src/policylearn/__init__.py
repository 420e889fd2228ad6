"""Efficient policy learning through the surrogate-loss classification reduction."""
from .bench import ExperimentPlan, run_experiment
from .data import Dataset, ScoredDataset, load_dataset, rng_stream
from .esprm import EsprmConfig, esprm_fit
from .gmm import PolynomialBasis, RandomFourierBasis, finite_gmm_fit
from .nn import MlpSpec, flexible_spec, linear_spec
from .nuisance import ScoreConfig, compute_scores, fit_nuisances
from .scenarios import FixtureSpec, generate_data, generate_fixture, oracle_policy_value, sample_scenario
from .surrogate import PolicyModel, erm_fit

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ScoredDataset", "load_dataset", "rng_stream",
    "MlpSpec", "linear_spec", "flexible_spec",
    "PolicyModel", "erm_fit", "EsprmConfig", "esprm_fit",
    "PolynomialBasis", "RandomFourierBasis", "finite_gmm_fit",
    "ScoreConfig", "compute_scores", "fit_nuisances",
    "FixtureSpec", "generate_data", "generate_fixture", "oracle_policy_value", "sample_scenario",
    "ExperimentPlan", "run_experiment",
]
