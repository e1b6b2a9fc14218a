import numpy as np
import pytest
from sklearn.base import clone

from mvclab import MCMVC, MCMVCPlusPlus, check_views
from mvclab.data import FormatError, SyntheticSpec, apply_miss_mask, synth_multiview
from mvclab.presets import get_preset

VS = synth_multiview(SyntheticSpec(per_cluster=20))
SMOKE = get_preset("smoke")


def test_check_views():
    views = check_views([np.ones((3, 2)), np.ones((3, 4))])
    assert [v.dtype for v in views] == [np.float64, np.float64]
    with pytest.raises(FormatError):
        check_views(np.ones((3, 2)))
    with pytest.raises(FormatError):
        check_views([np.ones((3, 2)), np.ones((4, 2))])
    with pytest.raises(FormatError):
        check_views([np.ones((3, 2))])
    with pytest.raises(ValueError):
        check_views([np.ones((3, 2)), np.full((3, 2), np.nan)])


def test_get_params_and_clone():
    est = MCMVC(n_clusters=4, epochs=7)
    assert est.get_params()["epochs"] == 7
    assert clone(est).get_params() == est.get_params()
    est.set_params(variant="mcmvc-i")
    assert est.variant == "mcmvc-i"


def test_mcmvc_fit_predict_transform():
    est = MCMVC(n_clusters=3, epochs=5, batch_size=32, config=SMOKE)
    labels = est.fit_predict(VS.views)
    assert labels.shape == (60,)
    assert est.transform(VS.views).shape == (60, 6)
    np.testing.assert_array_equal(est.predict(VS.views), labels)
    with pytest.raises(FormatError):
        est.predict([VS.views[0]] * 3)


def test_mcmvc_incomplete_mask():
    masked = apply_miss_mask(VS, 0.5, seed=0)
    est = MCMVC(n_clusters=3, epochs=3, batch_size=32, config=SMOKE)
    est.fit(masked.views, mask=masked.mask)
    assert est.model_.has("dual0")
    assert est.predict(masked.views, mask=masked.mask).shape == (60,)


def test_plus_plus_estimator():
    v3 = synth_multiview(SyntheticSpec(per_cluster=10, dims=(6, 7, 8)))
    est = MCMVCPlusPlus(n_clusters=3, batch_size=32, config=SMOKE).fit(v3.views)
    q = est.transform(v3.views)
    assert q.shape == (30, 3)
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
    np.testing.assert_array_equal(est.predict(v3.views), est.labels_)
