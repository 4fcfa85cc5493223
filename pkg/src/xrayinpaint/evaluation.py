"""Scoring and reporting: hole-region PSNR statistics per cohort,
side-by-side comparison grids, and subtraction-map reports.

Conventions fixed here: PSNR is computed on denormalized 8-bit pixels
over the hole only; identical hole regions yield the +inf sentinel and
are excluded from aggregation (capping would bias the mean); the spread
is the sample (n-1) standard deviation. Every aggregate is backed by
per-case rows so any reported number traces to a case id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .imaging import MaskSpec, apply_mask, psnr, save_gray_png, subtraction_map

GUTTER = 4  # white gutter between grid tiles, in pixels
DISPLAY_FILL = 0  # masked region rendered black in figure inputs


@dataclass(frozen=True)
class EvalCase:
    """One test patch: the model re-generates mask region from context."""

    case_id: str
    patch: np.ndarray
    mask: MaskSpec


@dataclass(frozen=True)
class PsnrStat:
    model_id: str
    cohort: str
    n: int
    mean: float | None  # None when every case was identical
    std: float | None
    n_excluded_identical: int

    def format_row(self) -> str:
        """Human-readable 'mean ± std dB (n)' line."""
        if self.mean is None:
            return f"{self.model_id} [{self.cohort}]: all identical (n={self.n})"
        return (
            f"{self.model_id} [{self.cohort}]: "
            f"{self.mean:.2f} ± {self.std:.2f} dB (n={self.n}, "
            f"excluded identical={self.n_excluded_identical})"
        )


def aggregate_psnr(values, model_id: str, cohort: str) -> PsnrStat:
    """Mean and sample std of the finite PSNRs; inf sentinels counted aside."""
    values = list(values)
    if not values:
        raise ValueError("cannot aggregate an empty cohort")
    finite = [v for v in values if math.isfinite(v)]
    excluded = len(values) - len(finite)
    if not finite:
        return PsnrStat(model_id, cohort, len(values), None, None, excluded)
    mean = sum(finite) / len(finite)
    std = (
        math.sqrt(sum((v - mean) ** 2 for v in finite) / (len(finite) - 1))
        if len(finite) > 1
        else 0.0
    )
    return PsnrStat(model_id, cohort, len(values), mean, std, excluded)


def evaluate_cohort(model, cases: list[EvalCase], cohort: str):
    """Score one model on one cohort.

    Returns (PsnrStat, per-case records). Records carry the case id, the
    hole PSNR (math.inf for identical), and the inpainted patch.
    """
    if not cases:
        raise ValueError("empty cohort")
    geometry = cases[0].mask
    for c in cases:
        if c.mask != geometry:
            raise ValueError(
                f"case {c.case_id} has mask {c.mask}, cohort geometry is {geometry}"
            )
    patches = np.stack([c.patch for c in cases])
    inpainted = model.transform(patches)
    records = []
    for case, out in zip(cases, inpainted):
        records.append(
            {
                "case_id": case.case_id,
                "cohort": cohort,
                "model_id": model.model_type,
                "psnr": psnr(case.patch, out, case.mask),
                "inpainted": out,
            }
        )
    stat = aggregate_psnr([r["psnr"] for r in records], model.model_type, cohort)
    return stat, records


def comparison_grid(
    cases: list[EvalCase],
    results_by_model: dict[str, np.ndarray],
    path,
    model_order=None,
) -> Path:
    """Tile grid: Input | one column per model | Original, one row per case.

    Tiles are separated (and bordered) by fixed white gutters; output is
    deterministic given identical inputs - no timestamps, no metadata.
    """
    order = list(model_order) if model_order is not None else sorted(results_by_model)
    for m in order:
        if len(results_by_model[m]) != len(cases):
            raise ValueError(
                f"model {m} produced {len(results_by_model[m])} results for {len(cases)} cases"
            )
    size = cases[0].patch.shape[0]
    cols = len(order) + 2
    rows = len(cases)
    width = cols * size + (cols + 1) * GUTTER
    height = rows * size + (rows + 1) * GUTTER
    canvas = np.full((height, width), 255, dtype=np.uint8)

    def put(r, c, tile):
        if tile.shape != (size, size):
            raise ShapeError(f"tile at ({r},{c}) has shape {tile.shape}, expected {size}")
        y = GUTTER + r * (size + GUTTER)
        x = GUTTER + c * (size + GUTTER)
        canvas[y : y + size, x : x + size] = tile

    for r, case in enumerate(cases):
        put(r, 0, apply_mask(case.patch, case.mask, DISPLAY_FILL))
        for c, m in enumerate(order, start=1):
            put(r, c, results_by_model[m][r])
        put(r, cols - 1, case.patch)
    return save_gray_png(canvas, path)


def subtraction_report(
    cases: list[EvalCase], inpainted: np.ndarray, out_dir, model_id: str
):
    """Per-case subtraction maps plus hole-residual statistics.

    Writes one display PNG per case and returns records with the mean
    absolute difference inside the hole - the quantity that separates
    clean cases (small residual noise) from cases whose hole hid an
    abnormality the model refused to regenerate.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for case, out in zip(cases, inpainted):
        sub = subtraction_map(case.patch, out)
        hole = case.mask.bool_mask(*case.patch.shape)
        mean_abs = float(np.abs(sub.values[hole]).mean())
        path = save_gray_png(sub.display, out_dir / f"{case.case_id}_{model_id}_sub.png")
        records.append(
            {
                "case_id": case.case_id,
                "model_id": model_id,
                "mean_abs_hole": mean_abs,
                "path": str(path),
            }
        )
    return records


@dataclass
class EvalReport:
    """Everything one evaluation run produced, with provenance."""

    stats: list = field(default_factory=list)
    per_case: list = field(default_factory=list)  # dicts without pixel data
    subtraction: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "stats": [
                {
                    "model_id": s.model_id,
                    "cohort": s.cohort,
                    "n": s.n,
                    "mean": s.mean,
                    "std": s.std,
                    "n_excluded_identical": s.n_excluded_identical,
                    "display": s.format_row(),
                }
                for s in self.stats
            ],
            "per_case": self.per_case,
            "subtraction": self.subtraction,
            "figures": self.figures,
            "provenance": self.provenance,
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
        return path

    def per_case_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case_id", "cohort", "model_id", "psnr"])
            for r in self.per_case:
                value = "identical" if not math.isfinite(r["psnr"]) else f"{r['psnr']:.6f}"
                writer.writerow([r["case_id"], r["cohort"], r["model_id"], value])
        return path


def evaluate_models(models: dict, cohorts: dict, out_dir, grid_cases: int = 5) -> EvalReport:
    """Run every model over every cohort; emit grids, maps, and the report.

    models: model_id -> fitted estimator; cohorts: cohort name -> list of
    EvalCase. Figures land under out_dir/figures, subtraction maps under
    out_dir/subtraction.
    """
    out_dir = Path(out_dir)
    report = EvalReport(
        provenance={
            "checkpoints": {mid: m.checkpoint_hash_ for mid, m in models.items()},
            "params": {mid: m.get_params() for mid, m in models.items()},
        }
    )
    for cohort_name, cases in cohorts.items():
        results_by_model = {}
        for model_id, model in models.items():
            stat, records = evaluate_cohort(model, cases, cohort_name)
            report.stats.append(stat)
            inpainted = np.stack([r.pop("inpainted") for r in records])
            results_by_model[model_id] = inpainted
            report.per_case.extend(records)
            report.subtraction.extend(
                subtraction_report(
                    cases, inpainted, out_dir / "subtraction" / cohort_name, model_id
                )
            )
        head = cases[:grid_cases]
        grid_path = comparison_grid(
            head,
            {m: arr[: len(head)] for m, arr in results_by_model.items()},
            out_dir / "figures" / f"comparison_{cohort_name}.png",
            model_order=sorted(models),
        )
        report.figures.append(str(grid_path))
    return report
