import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from din_ctr.estimator import DINClassifier
from din_ctr.validation import check_instances, check_labels
from toys import random_instances


@pytest.fixture
def data(schema):
    return random_instances(schema, 80, 1)


def small(**kw):
    params = dict(embedding_dim=3, mlp_widths=(6,), unit_hidden=4, optimizer="adam",
                  learning_rate=0.01, decay_rate=1.0, batch_size=16, epochs=2)
    params.update(kw)
    return DINClassifier(**params)


def test_get_params_and_clone():
    est = small(model_kind="base", seed=4)
    params = est.get_params()
    assert params["model_kind"] == "base" and params["seed"] == 4 and params["mlp_widths"] == (6,)
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_fit_predict_score(data):
    est = small().fit(data, eval_set=data)
    proba = est.predict_proba(data)
    assert proba.shape == (len(data), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(est.predict(data))) <= {0, 1}
    assert 0.0 <= est.score(data) <= 1.0
    assert len(est.history_) == 2 and est.history_[0].test_auc is not None
    np.testing.assert_allclose(1 / (1 + np.exp(-est.decision_function(data))), proba[:, 1], rtol=1e-9)


def test_fit_with_explicit_labels(data):
    flipped = 1 - data.labels
    est = small(epochs=1).fit(data, flipped)
    assert est.score(data, flipped) == pytest.approx(1 - est.score(data), abs=1e-12)


def test_fit_from_instance_list(schema, data):
    est = small(schema=schema, epochs=1).fit(list(data))
    assert est.predict_proba(list(data)[:3]).shape == (3, 2)


def test_deterministic(data):
    a = small(seed=2).fit(data).predict_proba(data)
    b = small(seed=2).fit(data).predict_proba(data)
    assert a.tobytes() == b.tobytes()


def test_not_fitted(data):
    with pytest.raises(NotFittedError):
        small().predict_proba(data)


def test_save_load(tmp_path, data):
    est = small(activation="dice").fit(data)
    est.save(tmp_path / "m.ckpt")
    back = DINClassifier.load(tmp_path / "m.ckpt", data.schema)
    np.testing.assert_allclose(back.predict_proba(data), est.predict_proba(data), rtol=1e-6)
    assert back.manifest_["config"]["activation"] == "dice"


def test_validation_helpers(schema, data):
    with pytest.raises(TypeError):
        check_instances(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        check_instances(list(data))  # a list needs a schema
    assert check_instances(data) is data
    assert check_labels([0, 1, 1], 3).dtype == np.int8
    with pytest.raises(ValueError):
        check_labels([0, 2], 2)
    with pytest.raises(ValueError):
        check_labels([0, 1], 3)
