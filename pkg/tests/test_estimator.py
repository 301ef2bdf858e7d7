import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from contextmeta.datasets import SyntheticSpec, generate
from contextmeta.errors import InputError
from contextmeta.estimator import ContextAgnosticMetaLearner, check_features, check_labels


@pytest.fixture(scope="module")
def pool():
    ds = generate(SyntheticSpec(kind="proc-glyphs", n_contexts=3, n_classes_per_context=8, samples_per_class=6))
    s = ds.samples
    return s.X, s.y, s.contexts


def small(**kw):
    base = dict(n_outer=5, hidden=(16, 8), finetune_steps=3, k=2, l=2)
    base.update(kw)
    return ContextAgnosticMetaLearner(**base)


def support_from(X, y, way=5):
    classes = np.unique(y)[:way]
    idx = [np.flatnonzero(y == c)[0] for c in classes]
    query = [np.flatnonzero(y == c)[1:] for c in classes]
    Xq = np.concatenate([X[q] for q in query])
    yq = np.concatenate([np.full(len(q), i) for i, q in enumerate(query)])
    return X[idx], np.arange(way), Xq, yq


def test_get_params_and_clone():
    est = small(lam=0.5)
    params = est.get_params()
    assert params["lam"] == 0.5 and params["hidden"] == (16, 8)
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(k=7)
    assert est.k == 7 and twin.k == 2


def test_fit_adapt_predict_score(pool):
    X, y, c = pool
    est = small().fit(X, y, c)
    assert est.n_contexts_ == 3 and len(est.history_) == 5
    Xs, ys, Xq, yq = support_from(X, y)
    est.adapt(Xs, ys)
    pred = est.predict(Xq)
    assert pred.shape == (len(Xq),) and set(pred) <= set(range(5))
    proba = est.predict_proba(Xq)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-5)
    assert 0.0 <= est.score(Xq, yq) <= 1.0


def test_fit_is_deterministic(pool):
    X, y, c = pool
    a = small(random_state=3).fit(X, y, c)
    b = small(random_state=3).fit(X, y, c)
    np.testing.assert_array_equal(a.state_.primary.values, b.state_.primary.values)


def test_transform_gives_penultimate_features(pool):
    X, y, c = pool
    est = small()
    Z = est.fit_transform(X, y, contexts=c)
    assert Z.shape == (len(X), 8)
    np.testing.assert_array_equal(Z, est.transform(X))


def test_base_method_needs_no_contexts(pool):
    X, y, _ = pool
    small(method="reptile").fit(X, y)
    with pytest.raises(InputError, match="context"):
        small(method="ca-reptile").fit(X, y)


def test_not_fitted_errors(pool):
    X, y, c = pool
    with pytest.raises(NotFittedError):
        small().predict(X)
    with pytest.raises(NotFittedError):
        small().transform(X)
    est = small().fit(X, y, c)
    with pytest.raises(NotFittedError, match="adapt"):
        est.predict(X)


def test_input_validation(pool):
    X, y, c = pool
    est = small().fit(X, y, c)
    with pytest.raises(InputError, match="shape"):
        est.transform(X[:, :4])
    with pytest.raises(InputError):
        est.adapt(X[:2], np.array([0, 9]))
    bad = X.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        check_features(bad)
    with pytest.raises(InputError):
        check_features(np.ones(3))
    with pytest.raises(InputError):
        check_labels([0.5, 1.0], 2, "y")
    with pytest.raises(InputError):
        check_labels([0, 1], 3, "y")
    with pytest.raises(InputError):
        check_labels([-1, 1], 2, "y")
    assert check_labels(np.array([1.0, 2.0]), 2, "y").dtype == np.int64
