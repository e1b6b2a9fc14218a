from dataclasses import replace

import numpy as np
import pytest

from mvclab import networks as nets
from mvclab.data import ConfigurationError, SyntheticSpec, apply_miss_mask, synth_multiview
from mvclab.presets import get_preset
from mvclab.training import (STAGES, TABLE1_GRID, AdamState, TrainConfig, TrainingDivergedError,
                             adam_step, minibatches, run_ablation, train_biview,
                             train_mcmvc_plus_plus)

SMALL = synth_multiview(SyntheticSpec(per_cluster=20))
FAST = replace(get_preset("smoke"), batch_size=32)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([3.7])}, AdamState(), 1e-3)
    assert p["w"][0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_non_finite_names_parameter():
    with pytest.raises(TrainingDivergedError, match="enc0.W0"):
        adam_step({"enc0.W0": np.zeros(1)}, {"enc0.W0": np.array([np.nan])}, AdamState(), 1e-3)


def test_minibatches_merge_singleton_tail():
    rng = np.random.default_rng(0)
    sizes = [len(b) for b in minibatches(9, 4, rng)]
    assert sizes == [4, 5]
    sizes = [len(b) for b in minibatches(10, 4, rng)]
    assert sizes == [4, 4, 2]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(n_clusters=1)
    cfg = TrainConfig.from_dict(TrainConfig(epochs=3).to_dict())
    assert cfg.epochs == 3


def test_zero_epochs_gives_empty_history():
    model, history, labels = train_biview(SMALL, replace(FAST, epochs=0))
    assert history.loss_rows == [] and labels.shape == (60,)


def test_biview_determinism():
    _, h1, l1 = train_biview(SMALL, FAST)
    _, h2, l2 = train_biview(SMALL, FAST)
    assert h1.loss_rows == h2.loss_rows
    np.testing.assert_array_equal(l1, l2)
    assert [r["epoch"] for r in h1.loss_rows] == list(range(1, FAST.epochs + 1))


def test_history_csvs(tmp_path):
    _, h, _ = train_biview(SMALL, FAST)
    h.write_losses(tmp_path / "losses.csv")
    h.write_metrics(tmp_path / "metrics.csv")
    lines = (tmp_path / "losses.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,clu,ins,rec,var,cla,total"
    assert len(lines) == FAST.epochs + 1
    assert (tmp_path / "metrics.csv").read_text().startswith("epoch,acc,nmi,ari,pur\n")


def test_baseline_variant_terms():
    _, h, _ = train_biview(SMALL, FAST, variant="baseline")
    assert set(h.loss_rows[0]["terms"]) == {"clu", "rec"}


def test_incomplete_requires_mask():
    with pytest.raises(ConfigurationError):
        train_biview(SMALL, FAST, incomplete=True)


def test_incomplete_training_adds_dual_prediction():
    vs = apply_miss_mask(SMALL, 0.5, seed=0)
    model, h, labels = train_biview(vs, FAST, incomplete=True)
    assert "pre" in h.loss_rows[0]["terms"] and model.has("dual0")
    assert labels.shape == (60,)


def test_biview_needs_two_views():
    v3 = synth_multiview(SyntheticSpec(per_cluster=5, dims=(6, 7, 8)))
    with pytest.raises(ConfigurationError):
        train_biview(v3, FAST)


def test_staged_pipeline_order_and_freezing():
    v3 = synth_multiview(SyntheticSpec(per_cluster=10, dims=(6, 7, 8)))
    snaps = {}

    def on_stage(name, model):
        snaps[name] = model.params.copy()

    model, h, res = train_mcmvc_plus_plus(v3, FAST, enhance=True, on_stage=on_stage)
    assert [s["stage"] for s in h.stages] == list(STAGES)
    assert list(snaps) == list(STAGES)
    init = nets.init_model(model.specs, FAST.seed).params
    for name in model.net_params("feat", "clus", "pred"):
        np.testing.assert_array_equal(snaps["pretrain"][name], init[name])
    for name in model.net_params("dec0", "dec1", "dec2"):
        np.testing.assert_array_equal(snaps["finetune"][name], snaps["match"][name])
    spans = {s["stage"]: s["last_epoch"] - s["first_epoch"] + 1 for s in h.stages}
    assert spans["pretrain"] == FAST.pretrain_epochs
    assert spans["contrast"] == FAST.contrast_epochs
    assert spans["finetune"] == FAST.finetune_epochs
    assert res.labels.shape == (30,) and len(res.correspondences) == 3


def test_staged_pipeline_without_enhancement():
    v3 = synth_multiview(SyntheticSpec(per_cluster=10, dims=(6, 7, 8)))
    _, h, res = train_mcmvc_plus_plus(v3, FAST, enhance=False)
    assert [s["stage"] for s in h.stages] == ["pretrain", "contrast", "fuse"]
    assert res.correspondences == []


def test_ablation_row_count():
    rows = run_ablation(SMALL, replace(FAST, epochs=2), TABLE1_GRID[:1], runs=1)
    assert len(rows) == 1
    rows = run_ablation(SMALL, replace(FAST, epochs=1), TABLE1_GRID, runs=1)
    assert len(rows) == 8


def test_presets():
    p = get_preset("caltech101-20")
    assert (p.lr, p.loss.lambda1, p.loss.lambda3, p.epochs) == (1e-4, 0.2, 0.2, 500)
    assert (p.loss.lambda2, p.loss.lambda4, p.batch_size) == (0.1, 0.2, 256)
    q = get_preset("landuse-21-incomplete")
    assert (q.loss.lambda1, q.loss.lambda3, q.epochs) == (1.1, 1.1, 400)
    r = get_preset("scene-15-i")
    assert r.loss.instance_variant == "infonce" and r.loss.lambda3 == 0.7
    b = get_preset("bdgp")
    assert (b.lr, b.loss.mu1, b.loss.mu2, b.loss.tau1) == (3e-4, 1e-4, 0.03, 1.0)
    with pytest.raises(KeyError):
        get_preset("imagenet")
