import json

import numpy as np
import pytest

from mvclab.autodiff import ContractError
from mvclab.data import (ConfigurationError, FormatError, SyntheticSpec, ViewSet, apply_miss_mask,
                         cross_view_rv, load_viewset, normalize_minmax, save_viewset,
                         synth_multiview)


def test_synth_shapes_and_determinism():
    vs = synth_multiview(SyntheticSpec())
    assert [v.shape for v in vs.views] == [(300, 10), (300, 15)]
    assert vs.n_clusters == 3
    assert synth_multiview(SyntheticSpec()) == vs
    assert synth_multiview(SyntheticSpec(seed=1)) != vs


def test_synth_noiseless_identity_maps_share_latent():
    vs = synth_multiview(SyntheticSpec(nuisance_scale=0.0, noise=0.0, maps="identity",
                                       dims=(9, 9), latent_dim=4, nuisance_dim=5))
    np.testing.assert_array_equal(vs.views[0], vs.views[1])
    assert np.all(vs.views[0][:, 4:] == 0)


def test_synth_validation():
    with pytest.raises(ContractError):
        SyntheticSpec(dims=(10,))
    with pytest.raises(ContractError):
        SyntheticSpec(dims=(5, 10), nuisance_dim=5)


def test_views_are_correlated_but_not_identical():
    rv = cross_view_rv(synth_multiview(SyntheticSpec()))
    assert 0.2 < rv < 0.99


def test_round_trip(tmp_path):
    vs = synth_multiview(SyntheticSpec(per_cluster=5, dims=(4, 6, 5), nuisance_dim=2))
    vs = apply_miss_mask(ViewSet(vs.views[:2], vs.labels, name=vs.name), 0.4, seed=0)
    save_viewset(vs, tmp_path)
    back = load_viewset(tmp_path)
    assert back == vs
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["m"] == vs.n_samples


def test_three_views_written(tmp_path):
    vs = synth_multiview(SyntheticSpec(per_cluster=3, dims=(4, 6, 5), nuisance_dim=2))
    save_viewset(vs, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("view*.csv")) == ["view0.csv", "view1.csv",
                                                                  "view2.csv"]
    assert load_viewset(tmp_path) == vs


def test_optional_labels(tmp_path):
    vs = ViewSet([np.ones((3, 2)), np.zeros((3, 1))])
    save_viewset(vs, tmp_path)
    back = load_viewset(tmp_path)
    assert back.labels is None and back.mask is None


def test_rejects_empty_mask_row(tmp_path):
    vs = ViewSet([np.ones((2, 2)), np.ones((2, 2))])
    save_viewset(vs, tmp_path)
    (tmp_path / "mask.csv").write_text("1,1\n0,0\n")
    with pytest.raises(FormatError):
        load_viewset(tmp_path)


def test_rejects_row_mismatch(tmp_path):
    vs = ViewSet([np.ones((3, 2)), np.ones((3, 2))])
    save_viewset(vs, tmp_path)
    (tmp_path / "view1.csv").write_text("1,1\n1,1\n")
    with pytest.raises(FormatError):
        load_viewset(tmp_path)
    with pytest.raises(FormatError):
        ViewSet([np.ones((3, 2)), np.ones((2, 2))])


def test_miss_mask():
    vs = synth_multiview(SyntheticSpec(per_cluster=50, clusters=2))
    assert apply_miss_mask(vs, 0.0).mask.all()
    masked = apply_miss_mask(vs, 0.5, seed=3)
    incomplete = ~masked.mask.all(axis=1)
    assert incomplete.sum() == 50
    assert (masked.mask[incomplete].sum(axis=1) == 1).all()
    np.testing.assert_array_equal(apply_miss_mask(vs, 0.5, seed=3).mask, masked.mask)
    with pytest.raises(ConfigurationError):
        apply_miss_mask(vs, 0.995)


def test_normalize_minmax():
    x = np.array([[0.0, 5.0, 2.0], [1.0, 5.0, 4.0], [0.5, 5.0, 3.0]])
    out = normalize_minmax(ViewSet([x, x])).views[0]
    np.testing.assert_array_equal(out[:, 0], x[:, 0])
    np.testing.assert_array_equal(out[:, 1], 0.0)
    assert out[:, 2].min() == 0.0 and out[:, 2].max() == 1.0
