"""Acceptance gate: one test per acceptance criterion, each printing a
PASS/FAIL line. Full-scale reproduction of the benchmark tables is out
of reach on a desk machine (multiple GPU-days per model plus a human
reader), so the gate is property-based: exact raster semantics, oracle
agreement, pipeline invariants, gradient checks, attention properties,
toy-scale training efficacy against the mean-fill baseline, the
2AFC accuracy/AUC identity, and the study-service contract.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion
lines as they pass.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch
import torch.nn as nn
from fastapi.testclient import TestClient

from xrayinpaint.data import build_patch_dataset, ingest_manifest, make_splits
from xrayinpaint.data.lungmask import load_lung_mask
from xrayinpaint.evaluation import aggregate_psnr
from xrayinpaint.imaging import (
    MaskSpec,
    PatchSpec,
    apply_mask,
    center_mask,
    compose,
    crop,
    paste_patch,
    psnr,
    subtraction_map,
)
from xrayinpaint.models import (
    ContextEncoderInpainter,
    ContextualAttentionInpainter,
    MeanFillInpainter,
    SemanticInpainter,
    attention_distributions,
    context_weights,
    generator_loss,
    latent_context_losses,
    latent_prior_losses,
    reconstruction_mse,
    score_log_loss,
)
from xrayinpaint.phantom import phantom_patches, write_phantom_dataset
from xrayinpaint.study import StudyStore, compute_results, create_app, generate_pairs
from xrayinpaint.study.pairs import load_pairs
from xrayinpaint.study.service import TRIAL_FIELDS
from xrayinpaint.study.stats import (
    analytic_two_normal_auc,
    simulate_latent_observer,
    wmw_auc_paired,
)

from .oracles import mean_std_two_pass, psnr_loops, wmw_auc
from .test_losses import finite_diff_grad, relative_error

CENTER64 = center_mask(128, 64)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL", flush=True)
        raise
    print(f"ACCEPTANCE {name}: PASS", flush=True)


# --------------------------------------------------------------------------
# Criterion 1: PSNR oracle equivalence
# --------------------------------------------------------------------------


def test_psnr_oracle_equivalence():
    with criterion("psnr-oracle-equivalence"):
        rng = np.random.default_rng(555)
        for _ in range(200):
            a = rng.integers(0, 256, (128, 128), dtype=np.uint8)
            b = rng.integers(0, 256, (128, 128), dtype=np.uint8)
            got = psnr(a, b, CENTER64)
            want = psnr_loops(a, b, 32, 32, 64, 64)
            assert got == pytest.approx(want, abs=1e-9)
        # forced case: maximal difference everywhere -> exactly 0 dB
        zeros = np.zeros((128, 128), dtype=np.uint8)
        full = np.full((128, 128), 255, dtype=np.uint8)
        assert psnr(zeros, full, CENTER64) == 0.0
        # forced case: identical region -> +inf sentinel, excluded from stats
        a = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        b = a.copy()
        b[0, 0] ^= 0xFF
        assert psnr(a, b, CENTER64) == math.inf
        stat = aggregate_psnr([30.0, math.inf, 40.0], "m", "healthy")
        assert stat.mean == pytest.approx(35.0) and stat.n_excluded_identical == 1


# --------------------------------------------------------------------------
# Criterion 2: masking / composition exactness
# --------------------------------------------------------------------------


def test_masking_and_composition_exactness():
    with criterion("masking-composition-exactness"):
        rng = np.random.default_rng(556)
        patch = rng.integers(1, 256, (128, 128), dtype=np.uint8)  # excludes the fill value
        masked = apply_mask(patch, CENTER64, fill=0)
        diff = masked != patch
        assert int(diff.sum()) == 4096
        hole = CENTER64.bool_mask(128, 128)
        assert np.array_equal(diff, hole)  # exhaustive: exactly the hole changed
        assert np.array_equal(masked[~hole], patch[~hole])

        # compose round trip, bit-exact
        ctx = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        hole_patch = ctx[CENTER64.slices()].copy()
        assert np.array_equal(compose(ctx, hole_patch, CENTER64), ctx)

        # paste round trip on a full image, bit-exact
        image = rng.integers(0, 256, (1024, 1024), dtype=np.uint8)
        spec = PatchSpec(900 - 128, 444, 128)
        assert np.array_equal(paste_patch(image, crop(image, spec), spec), image)

        # paste touches exactly the declared window
        replacement = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        pasted = paste_patch(image, replacement, spec)
        window = np.zeros_like(image, dtype=bool)
        window[spec.y0 : spec.y0 + 128, spec.x0 : spec.x0 + 128] = True
        assert np.array_equal(pasted[window].reshape(128, 128), replacement)
        assert np.array_equal(pasted[~window], image[~window])


# --------------------------------------------------------------------------
# Criterion 3: pipeline invariants on a 200-image fixture
# --------------------------------------------------------------------------


def test_pipeline_invariants_on_synthetic_fixture(tmp_path):
    with criterion("pipeline-invariants"):
        out = write_phantom_dataset(
            tmp_path / "data", n_images=200, size=256, seed=77, abnormal_fraction=0.3
        )
        manifest = ingest_manifest(out["labels_csv"], out["image_dir"])
        assert len(manifest.records) == 200
        n_abnormal = sum(1 for r in manifest.records if r.labels)
        n_normal = 200 - n_abnormal
        quotas = dict(
            n_train=n_normal - 40, n_test_normal=15, n_test_abnormal=min(15, n_abnormal)
        )

        split1 = make_splits(manifest, seed=5, **quotas)
        split2 = make_splits(manifest, seed=5, **quotas)

        # patient-disjointness, checked directly
        train_patients = {r.patient_id for r in split1.records if r.split == "train"}
        test_patients = {r.patient_id for r in split1.records if r.split.startswith("test")}
        assert train_patients & test_patients == set()
        # train labels empty
        assert all(not r.labels for r in split1.by_split("train"))
        # split reproducible under the fixed seed
        assert [(r.image_id, r.split) for r in split1.records] == [
            (r.image_id, r.split) for r in split2.records
        ]

        # patch store: every window overlaps the lung mask; rebuild is
        # hash-identical under the same seed
        from xrayinpaint.data import DatasetManifest

        subset = DatasetManifest(records=split1.by_split("train")[:40], seed=split1.seed)
        store1 = build_patch_dataset(
            subset, tmp_path / "s1", count_per_image=3, patch_size=64, seed=9,
            mask_dir=out["mask_dir"],
        )
        store2 = build_patch_dataset(
            subset, tmp_path / "s2", count_per_image=3, patch_size=64, seed=9,
            mask_dir=out["mask_dir"],
        )
        assert len(store1) == 40 * 3
        assert store1.content_hash() == store2.content_hash()
        masks = {
            r.image_id: load_lung_mask(out["mask_dir"], r.image_id)
            for r in subset.records
        }
        for i in range(len(store1)):
            e = store1.meta(i)
            window = masks[e["image_id"]][
                e["y0"] : e["y0"] + e["size"], e["x0"] : e["x0"] + e["size"]
            ]
            assert window.any(), f"window {i} misses the lung mask"


# --------------------------------------------------------------------------
# Criterion 4: loss and gradient correctness
# --------------------------------------------------------------------------


def test_loss_and_gradient_correctness():
    with criterion("loss-gradient-correctness"):
        rng = torch.Generator().manual_seed(12)
        # decomposition identity to 1e-12
        for _ in range(50):
            g = torch.randn(1, 1, 8, 8, generator=rng, dtype=torch.float64)
            t = torch.randn(1, 1, 8, 8, generator=rng, dtype=torch.float64)
            s = torch.rand(1, generator=rng, dtype=torch.float64) * 0.98 + 0.01
            combined = generator_loss(g, t, s).item()
            by_parts = 0.998 * reconstruction_mse(g, t).item() + 0.002 * score_log_loss(s).item()
            assert combined == pytest.approx(by_parts, abs=1e-12)

        # combined loss gradient wrt the generated 8x8 hole (adv term active)
        w = torch.randn(64, generator=rng, dtype=torch.float64) * 0.05
        t = torch.randn(1, 1, 8, 8, generator=rng, dtype=torch.float64)

        def critic(g):
            return torch.sigmoid((g.reshape(-1) * w).sum()).clamp(1e-6, 1 - 1e-6)

        def combined(g):
            return generator_loss(g, t, critic(g))

        g = torch.randn(1, 1, 8, 8, generator=rng, dtype=torch.float64, requires_grad=True)
        combined(g).backward()
        assert relative_error(g.grad, finite_diff_grad(combined, g.detach().clone())) < 1e-3

        # weighted-L1 context loss and total inversion loss, toy generator
        side, z_dim = 16, 4
        torch.manual_seed(13)
        net = nn.Sequential(nn.Linear(z_dim, side * side), nn.Tanh()).double()

        class Reshape(nn.Module):
            def __init__(self, inner):
                super().__init__()
                self.inner = inner

            def forward(self, z):
                return self.inner(z).reshape(z.shape[0], 1, side, side)

        class Critic(nn.Module):
            def __init__(self):
                super().__init__()
                self.lin = nn.Linear(side * side, 1).double()

            def forward(self, x):
                return torch.sigmoid(self.lin(x.flatten(1))).squeeze(1).clamp(1e-6, 1 - 1e-6)

        generator = Reshape(net)
        criticd = Critic()
        nprng = np.random.default_rng(14)
        original = torch.tensor(nprng.uniform(-0.5, 0.5, size=(1, 1, side, side)))
        weights = torch.tensor(context_weights(center_mask(side, 8), side, window=7))

        def ctx_loss(z):
            return latent_context_losses(generator, z, original, weights).sum()

        def total_loss(z):
            return (
                latent_context_losses(generator, z, original, weights)
                + 0.003 * latent_prior_losses(generator, criticd, z)
            ).sum()

        for f in (ctx_loss, total_loss):
            z = torch.tensor(nprng.normal(size=(1, z_dim)), requires_grad=True)
            f(z).backward()
            assert relative_error(z.grad, finite_diff_grad(f, z.detach().clone())) < 1e-3


# --------------------------------------------------------------------------
# Criterion 5: contextual attention properties
# --------------------------------------------------------------------------


def test_contextual_attention_properties():
    with criterion("contextual-attention-properties"):
        gen = torch.Generator().manual_seed(15)
        # row-stochastic within 1e-5, on many shapes
        for _ in range(10):
            nf = int(torch.randint(1, 20, (1,), generator=gen))
            nb = int(torch.randint(2, 150, (1,), generator=gen))
            d = int(torch.randint(8, 128, (1,), generator=gen))
            attn = attention_distributions(
                torch.randn(nf, d, generator=gen), torch.randn(nb, d, generator=gen), 10.0
            )
            assert torch.all(attn >= 0)
            np.testing.assert_allclose(attn.sum(dim=1).numpy(), 1.0, atol=1e-5)

        # planted-copy argmax on 50 randomized constructions
        for trial in range(50):
            nf = int(torch.randint(2, 12, (1,), generator=gen))
            nb = int(torch.randint(8, 120, (1,), generator=gen))
            d = int(torch.randint(16, 96, (1,), generator=gen))
            fg = torch.randn(nf, d, generator=gen)
            bg = torch.randn(nb, d, generator=gen)
            i = int(torch.randint(0, nf, (1,), generator=gen))
            j = int(torch.randint(0, nb, (1,), generator=gen))
            bg[j] = fg[i]
            attn = attention_distributions(fg, bg, 10.0)
            assert int(attn[i].argmax()) == j, f"construction {trial}"

        # permutation equivariance holds exactly (bitwise)
        for _ in range(10):
            fg = torch.randn(7, 24, generator=gen)
            bg = torch.randn(33, 24, generator=gen)
            perm = torch.randperm(33, generator=gen)
            assert torch.equal(
                attention_distributions(fg, bg[perm], 9.0),
                attention_distributions(fg, bg, 9.0)[:, perm],
            )


# --------------------------------------------------------------------------
# Criterion 6: toy training efficacy (the slow one)
# --------------------------------------------------------------------------

TOY_PATCH, TOY_HOLE = 32, 8
TRAIN_BUDGET_SECONDS = 30 * 60


@pytest.fixture(scope="module")
def toy_bench():
    """2,000-patch phantom corpus and the three trained toy models."""
    train = phantom_patches(2000, size=TOY_PATCH, seed=100)
    held = phantom_patches(200, size=TOY_PATCH, seed=200)
    clean = phantom_patches(100, size=TOY_PATCH, seed=300, disc_fraction=0.0)
    disc = phantom_patches(100, size=TOY_PATCH, seed=400, disc_fraction=1.0)
    baseline = MeanFillInpainter(patch_size=TOY_PATCH, hole_size=TOY_HOLE).fit()

    specs = {
        "ce": ContextEncoderInpainter(
            patch_size=TOY_PATCH, hole_size=TOY_HOLE, base_channels=16,
            encoder_layers=4, decoder_layers=2, discriminator_layers=2,
            epochs=6, batch_size=32, seed=0,
        ),
        "si": SemanticInpainter(
            patch_size=TOY_PATCH, hole_size=TOY_HOLE, z_dim=32, base_channels=32,
            epochs=8, batch_size=32, inversion_steps=150, inversion_lr=0.08,
            lambda_prior=0.003, window=7, seed=0,
        ),
        "ca": ContextualAttentionInpainter(
            patch_size=TOY_PATCH, hole_size=TOY_HOLE, base_channels=16,
            dilation_schedule=(2, 4), epochs=4, batch_size=32, seed=0,
        ),
    }
    models = {}
    fit_seconds = {}
    for model_id, est in specs.items():
        t0 = time.monotonic()
        models[model_id] = est.fit(train)
        fit_seconds[model_id] = time.monotonic() - t0
    return {
        "train": train,
        "held": held,
        "clean": clean,
        "disc": disc,
        "baseline": baseline,
        "models": models,
        "fit_seconds": fit_seconds,
    }


def test_toy_training_beats_mean_fill(toy_bench):
    with criterion("toy-training-efficacy"):
        base = toy_bench["baseline"].score(toy_bench["held"])
        for model_id, model in toy_bench["models"].items():
            assert toy_bench["fit_seconds"][model_id] <= TRAIN_BUDGET_SECONDS, (
                f"{model_id} took {toy_bench['fit_seconds'][model_id]:.0f}s to train"
            )
            score = model.score(toy_bench["held"])
            margin = score - base
            print(
                f"  {model_id}: {score:.2f} dB vs mean-fill {base:.2f} dB "
                f"(margin {margin:+.2f} dB, fit {toy_bench['fit_seconds'][model_id]:.0f}s)",
                flush=True,
            )
            assert margin >= 3.0, f"{model_id} margin {margin:.2f} dB < 3 dB"


def test_toy_subtraction_enhancement(toy_bench):
    with criterion("subtraction-enhancement"):
        mask = center_mask(TOY_PATCH, TOY_HOLE)
        hole = mask.bool_mask(TOY_PATCH, TOY_PATCH)

        def mean_hole_residual(model, patches):
            out = model.transform(patches)
            vals = [
                np.abs(subtraction_map(p, o).values[hole]).mean()
                for p, o in zip(patches, out)
            ]
            return float(np.mean(vals))

        for model_id, model in toy_bench["models"].items():
            r_clean = mean_hole_residual(model, toy_bench["clean"])
            r_disc = mean_hole_residual(model, toy_bench["disc"])
            ratio = r_disc / r_clean
            print(
                f"  {model_id}: residual clean {r_clean:.2f}, planted-disc {r_disc:.2f} "
                f"(ratio {ratio:.1f}x)",
                flush=True,
            )
            assert ratio >= 2.0, f"{model_id} enhancement ratio {ratio:.2f} < 2"


# --------------------------------------------------------------------------
# Criterion 7: 2AFC statistics
# --------------------------------------------------------------------------


def test_two_afc_statistics():
    with criterion("2afc-statistics"):
        real, altered, correct = simulate_latent_observer(10_000, separation=1.0, seed=42)
        accuracy = float(correct.mean())
        assert abs(accuracy - analytic_two_normal_auc(1.0)) < 0.02
        # forced-choice accuracy equals the WMW estimator exactly, both the
        # package implementation and the independently coded oracle
        assert accuracy == wmw_auc_paired(real, altered)
        assert accuracy == wmw_auc(list(real), list(altered))
        # a random observer sits at 0.5 +- 0.02
        _, _, random_correct = simulate_latent_observer(10_000, separation=0.0, seed=43)
        assert abs(float(random_correct.mean()) - 0.5) < 0.02
        # identity survives the aggregation path used by the live service
        records = [
            {"pair_id": f"p{i}", "model_id": "sim", "correct": bool(c)}
            for i, c in enumerate(correct)
        ]
        assert compute_results(records).overall_accuracy == accuracy


# --------------------------------------------------------------------------
# Criterion 8: study service contract suite (no UI required)
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def service_setup(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("acceptance_study")
    out = write_phantom_dataset(
        tmp / "data", n_images=10, size=256, seed=91, abnormal_fraction=0.3
    )
    manifest = ingest_manifest(out["labels_csv"], out["image_dir"])
    n_abnormal = sum(1 for r in manifest.records if r.labels)
    n_normal = len(manifest.records) - n_abnormal
    manifest = make_splits(
        manifest, seed=2, n_train=1, n_test_normal=n_normal - 2,
        n_test_abnormal=min(2, n_abnormal),
    )
    # paper hole geometry (128px window, 64px hole) so the 4096 bound is
    # checked exactly as stated
    models = {
        "ce": ContextEncoderInpainter(base_channels=4, epochs=0, seed=1).fit(
            phantom_patches(2, size=128, seed=0)
        ),
        "meanfill": MeanFillInpainter().fit(),
    }
    generate_pairs(
        manifest, models, n_pairs=6, seed=12, out_dir=tmp / "study", mask_dir=out["mask_dir"]
    )
    store = StudyStore(tmp / "study")
    return TestClient(create_app(store)), store, tmp


def test_study_service_contract(service_setup):
    api, store, tmp = service_setup
    with criterion("study-service-contract"):
        # altered-pixel bound on every generated pair, recomputed from disk
        from xrayinpaint.imaging import load_gray_png

        pairs = load_pairs(tmp / "study")
        assert len(pairs) == 6
        for p in pairs:
            assert p.mask["hw"] * p.mask["hh"] == 4096
            altered_name = p.left_image if p.altered_position == "left" else p.right_image
            altered = load_gray_png(tmp / "study" / "images" / altered_name).pixels
            source = load_gray_png(tmp / "data" / "images" / f"{p.altered_source_id}.png").pixels
            assert int(np.sum(altered != source)) <= 4096

        # blinding: the payload schema carries no ground truth
        sid = api.post("/v1/sessions", json={"observer_id": "acc"}).json()["session_id"]
        payload = api.get(f"/v1/sessions/{sid}/trials/0").json()
        assert set(payload) == TRIAL_FIELDS
        import json as json_mod

        text = json_mod.dumps(payload)
        for leak in ("model", "altered", "real_", "correct", "ce", "meanfill"):
            assert leak not in text

        # strict sequencing
        assert api.get(f"/v1/sessions/{sid}/trials/3").status_code == 409

        # idempotent response recording
        body = {"pair_id": payload["pair_id"], "chosen_position": "left"}
        assert api.post(f"/v1/sessions/{sid}/responses", json=body).json()["replayed"] is False
        assert api.post(f"/v1/sessions/{sid}/responses", json=body).json()["replayed"] is True
        assert len(store.log_records()) == 1
        conflict = api.post(
            f"/v1/sessions/{sid}/responses",
            json={"pair_id": payload["pair_id"], "chosen_position": "right"},
        )
        assert conflict.status_code == 409

        # finish the session; results must be recomputable from the log
        for i in range(1, len(pairs)):
            trial = api.get(f"/v1/sessions/{sid}/trials/{i}").json()
            api.post(
                f"/v1/sessions/{sid}/responses",
                json={"pair_id": trial["pair_id"], "chosen_position": "right"},
            )
        served = api.get("/v1/results").json()
        assert served == compute_results(store.log_records()).to_dict()
