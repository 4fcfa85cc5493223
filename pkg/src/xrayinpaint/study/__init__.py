from .pairs import TrialPair, generate_pairs
from .stats import StudyResult, compute_results, simulate_latent_observer, wmw_auc_paired
from .storage import StudyStore
from .service import create_app

__all__ = [
    "TrialPair",
    "generate_pairs",
    "StudyResult",
    "compute_results",
    "simulate_latent_observer",
    "wmw_auc_paired",
    "StudyStore",
    "create_app",
]
