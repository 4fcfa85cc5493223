"""Command-line entry point orchestrating the full pipeline.

Stages write their outputs under the configured workdir and record a
stamp (config hash + output list), so re-running a stage with an
unchanged config skips the work unless --force is given. Exit codes:
0 success, 2 configuration problems, 3 data problems, 4 runtime
failures. All diagnostics go to stderr as JSON lines.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, load_config
from .data import (
    DatasetManifest,
    PatchStore,
    build_patch_dataset,
    extract_nodule_patch,
    ingest_manifest,
    load_nodule_annotations,
    make_splits,
)
from .errors import ConfigError, DataError, XrayInpaintError
from .evaluation import EvalCase, evaluate_models
from .imaging import (
    PatchSpec,
    center_mask,
    crop,
    load_gray_png,
    save_gray_png,
    subtraction_map,
)
from .models import MODEL_TYPES, load_inpainter
from .phantom import write_phantom_dataset
from .study import StudyStore, create_app, generate_pairs

TRAINABLE = ("ce", "si", "ca")


def log(step: str, **fields):
    record = {"ts": round(time.time(), 3), "step": step, **fields}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


class Stage:
    """Skip bookkeeping: a stage re-runs only if config or outputs changed."""

    def __init__(self, cfg: RunConfig, name: str, outputs, force: bool, dry_run: bool):
        self.cfg = cfg
        self.name = name
        self.outputs = [Path(o) for o in outputs]
        self.force = force
        self.dry_run = dry_run
        self.stamp_path = cfg.workdir_path / ".stamps" / f"{name}.json"

    def should_skip(self) -> bool:
        if self.force or not self.stamp_path.is_file():
            return False
        try:
            stamp = json.loads(self.stamp_path.read_text())
        except json.JSONDecodeError:
            return False
        return stamp.get("config_hash") == self.cfg.content_hash() and all(
            o.exists() for o in self.outputs
        )

    def plan(self) -> dict:
        return {
            "stage": self.name,
            "outputs": [str(o) for o in self.outputs],
            "would_skip": self.should_skip(),
        }

    def done(self):
        self.stamp_path.parent.mkdir(parents=True, exist_ok=True)
        self.stamp_path.write_text(
            json.dumps(
                {"config_hash": self.cfg.content_hash(), "outputs": [str(o) for o in self.outputs]},
                indent=1,
            )
        )


def _manifest_path(cfg) -> Path:
    return cfg.workdir_path / "manifest.json"


def _load_manifest(cfg, need_splits=False) -> DatasetManifest:
    path = _manifest_path(cfg)
    if not path.is_file():
        raise DataError(f"no manifest at {path}: run `ingest` first")
    manifest = DatasetManifest.from_json(path)
    if need_splits and manifest.counts["train"] == 0 and manifest.counts["test_normal"] == 0:
        raise DataError("manifest has no split assignments: run `split` first")
    return manifest


def _checkpoint_path(cfg, model_id) -> Path:
    return cfg.workdir_path / "checkpoints" / f"{model_id}.pt"


def _load_model(cfg, model_id):
    path = _checkpoint_path(cfg, model_id)
    if not path.is_file():
        raise DataError(f"no checkpoint at {path}: run `train {model_id}` first")
    return load_inpainter(path)


def _build_estimator(cfg, model_id):
    if model_id not in MODEL_TYPES:
        raise ConfigError(f"unknown model {model_id!r}, choose from {sorted(MODEL_TYPES)}")
    params = {
        "patch_size": cfg.sampling.patch_size,
        "hole_size": cfg.sampling.hole_size,
        "fill_value": cfg.sampling.fill_value,
        "seed": cfg.seeds.train,
    }
    params.update(getattr(cfg.models, model_id, {}) if model_id in TRAINABLE else {})
    try:
        return MODEL_TYPES[model_id](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {model_id!r}: {exc}")


@click.group()
@click.option(
    "--config",
    "config_path",
    envvar="XRAYINPAINT_CONFIG",
    type=click.Path(),
    default=None,
    help="YAML run configuration (env: XRAYINPAINT_CONFIG).",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a config field by dotted path; flags win over the file.",
)
@click.option("--workdir", default=None, help="Override the configured workdir.")
@click.option("--workers", default=None, type=int, help="Thread budget for numeric backends.")
@click.option("--force", is_flag=True, help="Re-run stages even if outputs are up to date.")
@click.option("--dry-run", is_flag=True, help="Print the resolved plan, change nothing.")
@click.pass_context
def cli(ctx, config_path, overrides, workdir, workers, force, dry_run):
    parsed = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        parsed.append((key, value))
    cfg = load_config(config_path, parsed)
    if workdir is not None:
        cfg.workdir = workdir
    if workers is not None:
        cfg.workers = workers
    import torch

    torch.set_num_threads(max(1, int(cfg.workers)))
    ctx.obj = {"cfg": cfg, "force": force, "dry_run": dry_run}


def _stage(ctx, name, outputs) -> Stage:
    return Stage(ctx.obj["cfg"], name, outputs, ctx.obj["force"], ctx.obj["dry_run"])


@cli.command("make-fixture")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n-images", default=40, show_default=True)
@click.option("--size", default=256, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--abnormal-fraction", default=0.3, show_default=True)
@click.pass_context
def make_fixture(ctx, out_dir, n_images, size, seed, abnormal_fraction):
    """Materialize a synthetic phantom dataset for desk-scale runs."""
    if ctx.obj["dry_run"]:
        log("make-fixture", dry_run=True, out=out_dir, n_images=n_images)
        return
    paths = write_phantom_dataset(
        out_dir, n_images=n_images, size=size, seed=seed, abnormal_fraction=abnormal_fraction
    )
    log("make-fixture", **{k: str(v) for k, v in paths.items()})


@cli.command()
@click.pass_context
def ingest(ctx):
    """Read the label CSV, check image files, write the manifest."""
    cfg = ctx.obj["cfg"]
    stage = _stage(ctx, "ingest", [_manifest_path(cfg)])
    if ctx.obj["dry_run"]:
        log("ingest", **stage.plan())
        return
    if stage.should_skip():
        log("ingest", skipped=True)
        return
    manifest = ingest_manifest(cfg.data.label_csv, cfg.data.image_dir)
    manifest.to_json(_manifest_path(cfg))
    stage.done()
    log(
        "ingest",
        records=len(manifest.records),
        missing_files=len(manifest.missing_files),
        manifest=str(_manifest_path(cfg)),
    )


@cli.command()
@click.pass_context
def split(ctx):
    """Assign patient-disjoint train/test splits."""
    cfg = ctx.obj["cfg"]
    stage = _stage(ctx, "split", [_manifest_path(cfg)])
    if ctx.obj["dry_run"]:
        log("split", **stage.plan())
        return
    if stage.should_skip():
        log("split", skipped=True)
        return
    manifest = _load_manifest(cfg)
    manifest = make_splits(
        manifest,
        seed=cfg.seeds.split,
        n_train=cfg.split.n_train,
        n_test_normal=cfg.split.n_test_normal,
        n_test_abnormal=cfg.split.n_test_abnormal,
    )
    manifest.to_json(_manifest_path(cfg))
    stage.done()
    log("split", **manifest.counts)


@cli.command()
@click.pass_context
def sample(ctx):
    """Sample lung-overlapping training patches into the patch store."""
    cfg = ctx.obj["cfg"]
    store_dir = cfg.workdir_path / "store"
    stage = _stage(ctx, "sample", [store_dir / "header.json", store_dir / "index.jsonl"])
    if ctx.obj["dry_run"]:
        log("sample", **stage.plan())
        return
    if stage.should_skip():
        log("sample", skipped=True)
        return
    manifest = _load_manifest(cfg, need_splits=True)
    store = build_patch_dataset(
        manifest,
        store_dir,
        count_per_image=cfg.sampling.count_per_image,
        patch_size=cfg.sampling.patch_size,
        seed=cfg.seeds.sample,
        mask_dir=cfg.data.mask_dir,
    )
    stage.done()
    log("sample", patches=len(store), store=str(store_dir), content_hash=store.content_hash())


@cli.command()
@click.argument("model_id", type=click.Choice(TRAINABLE))
@click.option("--resume", "resume_from", type=click.Path(), default=None)
@click.pass_context
def train(ctx, model_id, resume_from):
    """Train one model on the patch store and save its checkpoint."""
    cfg = ctx.obj["cfg"]
    ckpt = _checkpoint_path(cfg, model_id)
    loss_csv = cfg.workdir_path / "checkpoints" / f"{model_id}_loss.csv"
    stage = _stage(ctx, f"train-{model_id}", [ckpt, loss_csv])
    if ctx.obj["dry_run"]:
        log("train", model=model_id, **stage.plan())
        return
    if stage.should_skip():
        log("train", model=model_id, skipped=True)
        return
    store_dir = cfg.workdir_path / "store"
    if not (store_dir / "header.json").is_file():
        raise DataError(f"no patch store at {store_dir}: run `sample` first")
    store = PatchStore(store_dir)
    est = _build_estimator(cfg, model_id)
    log("train", model=model_id, patches=len(store), params=est.get_params())
    est.fit(store, resume_from=resume_from, checkpoint_dir=cfg.workdir_path / "checkpoints" / "epochs")
    est.save(ckpt)
    est.export_loss_history(loss_csv)
    stage.done()
    log(
        "train",
        model=model_id,
        epochs=est.epoch_,
        steps=len(est.loss_history_),
        checkpoint=str(ckpt),
        checkpoint_hash=est.checkpoint_hash_,
    )


@cli.command()
@click.option("--model", "model_id", type=click.Choice(sorted(MODEL_TYPES)), required=True)
@click.option("--patch", "patch_png", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--attention-sidecar", is_flag=True, help="Dump the attention map (ca only).")
@click.pass_context
def inpaint(ctx, model_id, patch_png, out_dir, attention_sidecar):
    """Inpaint one patch PNG with a trained model."""
    cfg = ctx.obj["cfg"]
    if ctx.obj["dry_run"]:
        log("inpaint", model=model_id, patch=patch_png, dry_run=True)
        return
    model = (
        MODEL_TYPES["meanfill"](
            patch_size=cfg.sampling.patch_size,
            hole_size=cfg.sampling.hole_size,
            fill_value=cfg.sampling.fill_value,
        ).fit()
        if model_id == "meanfill"
        else _load_model(cfg, model_id)
    )
    image = load_gray_png(patch_png)
    out_dir = Path(out_dir)
    if attention_sidecar:
        if model_id != "ca":
            raise ConfigError("--attention-sidecar is only meaningful for the ca model")
        result = model.inpaint(
            image.pixels, attention_sidecar=out_dir / f"{image.id}_{model_id}_attention.npz"
        )
    else:
        result = model.inpaint(image.pixels)
    out_path = save_gray_png(result.patch, out_dir / f"{image.id}_{model_id}.png")
    log(
        "inpaint",
        model=model_id,
        output=str(out_path),
        checkpoint_hash=result.checkpoint_hash,
    )


def _healthy_cases(cfg, manifest):
    from .data.lungmask import heuristic_lung_mask, load_lung_mask
    from .data.sampling import sample_patch_specs
    from .data.store import derive_seed

    records = manifest.by_split("test_normal")
    if not records:
        raise DataError("no test_normal images: run `split` first")
    mask = center_mask(cfg.sampling.patch_size, cfg.sampling.hole_size)
    cases = []
    per_image = max(1, -(-cfg.evaluation.n_healthy // len(records)))  # ceil division
    for record in records:
        if len(cases) >= cfg.evaluation.n_healthy:
            break
        image = load_gray_png(record.file_path)
        lung = load_lung_mask(cfg.data.mask_dir, record.image_id, shape=image.pixels.shape)
        if lung is None:
            lung = heuristic_lung_mask(image.pixels)
        specs = sample_patch_specs(
            image,
            lung,
            count=per_image,
            patch_size=cfg.sampling.patch_size,
            rng_seed=derive_seed(cfg.seeds.sample, f"eval-healthy:{record.image_id}"),
        )
        for k, spec in enumerate(specs):
            if len(cases) >= cfg.evaluation.n_healthy:
                break
            cases.append(
                EvalCase(f"{record.image_id}_w{k}", crop(image.pixels, spec), mask)
            )
    return cases


def _abnormal_cases(cfg, manifest):
    if cfg.data.nodule_csv is None:
        return []
    annotations = load_nodule_annotations(cfg.data.nodule_csv)
    by_image = {}
    for ann in annotations:
        by_image.setdefault(ann.image_id, ann)
    records = [r for r in manifest.by_split("test_abnormal") if r.image_id in by_image]
    mask = center_mask(cfg.sampling.patch_size, cfg.sampling.hole_size)
    cases = []
    for record in records[: cfg.evaluation.n_abnormal]:
        ann = by_image[record.image_id]
        image = load_gray_png(record.file_path)
        if cfg.sampling.patch_size == 128 and cfg.sampling.hole_size == 64:
            patch, patch_mask = extract_nodule_patch(image.pixels, ann)
            cases.append(EvalCase(f"{record.image_id}_nodule", patch, patch_mask))
        else:
            # desk-scale geometry: center the model's window on the nodule box
            cx, cy = ann.x0 + 32, ann.y0 + 32
            half = cfg.sampling.patch_size // 2
            x0 = int(np.clip(cx - half, 0, image.width - cfg.sampling.patch_size))
            y0 = int(np.clip(cy - half, 0, image.height - cfg.sampling.patch_size))
            patch = crop(image.pixels, PatchSpec(x0, y0, cfg.sampling.patch_size))
            cases.append(EvalCase(f"{record.image_id}_nodule", patch, mask))
    return cases


@cli.command()
@click.pass_context
def evaluate(ctx):
    """Score the trained models on healthy and abnormal cohorts."""
    cfg = ctx.obj["cfg"]
    eval_dir = cfg.workdir_path / "eval"
    stage = _stage(ctx, "evaluate", [eval_dir / "report.json", eval_dir / "per_case.csv"])
    if ctx.obj["dry_run"]:
        log("evaluate", **stage.plan())
        return
    if stage.should_skip():
        log("evaluate", skipped=True)
        return
    manifest = _load_manifest(cfg, need_splits=True)
    models = {mid: _load_model(cfg, mid) for mid in cfg.evaluation.models}
    cohorts = {"healthy": _healthy_cases(cfg, manifest)}
    abnormal = _abnormal_cases(cfg, manifest)
    if abnormal:
        cohorts["abnormal"] = abnormal
    report = evaluate_models(models, cohorts, eval_dir, grid_cases=cfg.evaluation.grid_cases)
    report.to_json(eval_dir / "report.json")
    report.per_case_csv(eval_dir / "per_case.csv")
    stage.done()
    for stat in report.stats:
        click.echo(stat.format_row())
    log("evaluate", report=str(eval_dir / "report.json"), cohorts={k: len(v) for k, v in cohorts.items()})


@cli.command()
@click.option("--original", "original_png", type=click.Path(), required=True)
@click.option("--inpainted", "inpainted_png", type=click.Path(), required=True)
@click.option("--out", "out_png", type=click.Path(), required=True)
@click.pass_context
def subtract(ctx, original_png, inpainted_png, out_png):
    """Write the subtraction map (original - inpainted) as a display PNG."""
    if ctx.obj["dry_run"]:
        log("subtract", original=original_png, inpainted=inpainted_png, dry_run=True)
        return
    original = load_gray_png(original_png)
    inpainted = load_gray_png(inpainted_png)
    sub = subtraction_map(original.pixels, inpainted.pixels)
    save_gray_png(sub.display, out_png)
    log(
        "subtract",
        output=str(out_png),
        mean_abs=float(np.abs(sub.values).mean()),
        max_abs=int(np.abs(sub.values).max()),
    )


@cli.command("study-prepare")
@click.pass_context
def study_prepare(ctx):
    """Generate real-vs-altered image pairs for the observer study."""
    cfg = ctx.obj["cfg"]
    study_dir = cfg.workdir_path / "study"
    stage = _stage(ctx, "study-prepare", [study_dir / "pairs.json"])
    if ctx.obj["dry_run"]:
        log("study-prepare", **stage.plan())
        return
    if stage.should_skip():
        log("study-prepare", skipped=True)
        return
    manifest = _load_manifest(cfg, need_splits=True)
    models = {mid: _load_model(cfg, mid) for mid in cfg.study.models}
    pairs = generate_pairs(
        manifest,
        models,
        n_pairs=cfg.study.n_pairs,
        seed=cfg.seeds.study,
        out_dir=study_dir,
        mask_dir=cfg.data.mask_dir,
        same_source=cfg.study.same_source,
    )
    stage.done()
    log("study-prepare", pairs=len(pairs), study_dir=str(study_dir))


@cli.command("study-serve")
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.pass_context
def study_serve(ctx, host, port):
    """Serve the observer study API (blocks until interrupted)."""
    cfg = ctx.obj["cfg"]
    study_dir = cfg.workdir_path / "study"
    if ctx.obj["dry_run"]:
        log("study-serve", study_dir=str(study_dir), dry_run=True)
        return
    if not (study_dir / "pairs.json").is_file():
        raise DataError(f"no study at {study_dir}: run `study-prepare` first")
    import uvicorn

    app = create_app(StudyStore(study_dir))
    log("study-serve", host=host or cfg.study.host, port=port or cfg.study.port)
    uvicorn.run(app, host=host or cfg.study.host, port=port or cfg.study.port, log_level="warning")


@cli.command()
@click.pass_context
def report(ctx):
    """Aggregate evaluation and study outputs into one summary."""
    cfg = ctx.obj["cfg"]
    if ctx.obj["dry_run"]:
        log("report", dry_run=True)
        return
    summary = {"workdir": str(cfg.workdir_path), "config_hash": cfg.content_hash()}
    eval_report = cfg.workdir_path / "eval" / "report.json"
    if eval_report.is_file():
        payload = json.loads(eval_report.read_text())
        summary["evaluation"] = payload["stats"]
        for stat in payload["stats"]:
            click.echo(stat["display"])
    study_dir = cfg.workdir_path / "study"
    if (study_dir / "pairs.json").is_file():
        store = StudyStore(study_dir)
        records = store.log_records()
        if records:
            results = store.results().to_dict()
            summary["study"] = results
            click.echo(f"observer accuracy overall: {results['overall']['accuracy']:.4f}")
            for mid, row in results["per_model"].items():
                click.echo(f"observer accuracy [{mid}]: {row['accuracy']:.4f} (n={row['n']})")
        else:
            summary["study"] = {"responses": 0}
            click.echo("study prepared, no responses recorded yet")
    out = cfg.workdir_path / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=1, sort_keys=True))
    log("report", output=str(out))


def main(argv=None) -> int:
    """Console entry point with stable exit-code classes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 130
    except click.ClickException as exc:
        exc.show()
        return 2  # usage problems are configuration problems
    except ConfigError as exc:
        log("error", kind="config", message=str(exc))
        return 2
    except DataError as exc:
        log("error", kind="data", message=str(exc))
        return 3
    except XrayInpaintError as exc:
        log("error", kind="runtime", message=str(exc))
        return 4
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports everything
        log("error", kind="runtime", message=f"{type(exc).__name__}: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
