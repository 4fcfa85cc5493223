"""Forced-choice accuracy and its AUC reading.

In a 2AFC trial the observer picks whichever of the two images looks
more like an unaltered radiograph. When choices are induced by
comparing latent quality scores, the proportion of correct choices is
exactly the Wilcoxon-Mann-Whitney U statistic over the presented
(real, altered) score pairs - i.e. the empirical area under the ROC
curve for telling real from altered. compute_results therefore reports
accuracy per model and overall, nothing more exotic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StudyResult:
    per_model: dict  # model_id -> {"n": int, "accuracy": float}
    overall_n: int
    overall_accuracy: float

    def to_dict(self) -> dict:
        return {
            "per_model": self.per_model,
            "overall": {"n": self.overall_n, "accuracy": self.overall_accuracy},
        }


def compute_results(records) -> StudyResult:
    """Aggregate response records ({model_id, correct}) into accuracies."""
    records = list(records)
    if not records:
        raise ValueError("no responses recorded yet")
    per_model = {}
    for r in records:
        bucket = per_model.setdefault(r["model_id"], {"n": 0, "n_correct": 0})
        bucket["n"] += 1
        bucket["n_correct"] += int(bool(r["correct"]))
    out = {
        mid: {"n": b["n"], "accuracy": b["n_correct"] / b["n"]}
        for mid, b in sorted(per_model.items())
    }
    n_total = len(records)
    n_correct = sum(int(bool(r["correct"])) for r in records)
    return StudyResult(per_model=out, overall_n=n_total, overall_accuracy=n_correct / n_total)


def wmw_auc_paired(real_scores, altered_scores) -> float:
    """U-statistic over the presented pairs: P(real beats altered), ties half."""
    x = np.asarray(real_scores, dtype=np.float64)
    y = np.asarray(altered_scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) == 0:
        raise ValueError("need equal-length nonempty score vectors")
    return float(np.mean((x > y) + 0.5 * (x == y)))


def simulate_latent_observer(n_trials: int, separation: float, seed: int):
    """Simulated observer whose choice is the higher latent quality score.

    Real images score N(separation, 1), altered images N(0, 1); the
    observer picks the larger score, so expected accuracy is
    Phi(separation / sqrt(2)) - the analytic AUC of the two-normal
    discrimination. Returns (real_scores, altered_scores, correct).
    """
    rng = np.random.default_rng(seed)
    real = rng.normal(separation, 1.0, size=n_trials)
    altered = rng.normal(0.0, 1.0, size=n_trials)
    correct = real > altered  # continuous scores: ties have probability zero
    return real, altered, correct


def analytic_two_normal_auc(separation: float) -> float:
    from math import erf, sqrt

    return 0.5 * (1.0 + erf(separation / sqrt(2.0) / sqrt(2.0)))
