"""Model containers: prediction semantics and JSON round-trips."""

import json

import numpy as np
import pytest

from fairshift import (
    DataError,
    Dataset,
    DensityInfo,
    DualParams,
    FairnessCriterion,
    FairRobustModel,
    FeatureMap,
    GroupMarginals,
    HardtMixing,
    HardtModel,
    LinearModel,
    RbaModel,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)

FMAP = FeatureMap(num_features=2)


@pytest.fixture
def rows():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(20, 2))
    a = (rng.random(20) < 0.5).astype(int)
    return Dataset(features=x, attribute=a, labels=None)


def density_for(n, scale=1.0):
    return DensityInfo(src_density=np.full(n, 0.5), trg_density=np.full(n, 0.5),
                       ratio_st=np.full(n, scale), ratio_ts=np.full(n, 1.0 / scale))


def linear(method="lr"):
    return LinearModel(method=method, theta=np.array([0.4, -1.2, 0.3, 0.1]),
                       feature_map=FMAP, C=0.1, converged=True)


def rba(theta=(0.5, -0.25, 0.0, 0.2)):
    return RbaModel(theta=np.array(theta), feature_map=FMAP, C=0.01,
                    converged=True)


def fair(iid=False):
    return FairRobustModel(
        method="fair_lr" if iid else "fair_robust_shift",
        params=DualParams(theta=np.array([0.3, 0.7, -0.2, 0.05]),
                          lambda_0=-0.11, lambda_1=0.07, mu=0.42),
        marginals=GroupMarginals(g_tilde_0=0.3, g_tilde_1=0.25),
        criterion=FairnessCriterion.EQUALIZED_OPPORTUNITY,
        feature_map=FMAP,
        C=0.1,
        iid=iid,
        converged=True,
        mu_bracketed=True,
        density_fingerprint=None if iid else "abc123",
    )


def hardt():
    mixing = HardtMixing(probs=np.array([[0.1, 0.9], [0.0, 1.0]]),
                         tpr_target=0.85, expected_error=0.21)
    return HardtModel(base=linear(), mixing=mixing)


# ---------------------------------------------------------------- predict


def test_linear_model_predicts_sigmoid_scores(rows):
    model = linear()
    z = model.scores(rows)
    assert z.shape == (rows.n,)
    p = model.predict_proba(rows)
    np.testing.assert_allclose(np.log(p / (1 - p)), z, atol=1e-12)


def test_rba_zero_theta_predicts_half(rows):
    model = rba(theta=(0.0, 0.0, 0.0, 0.0))
    p = model.predict_proba(rows, density_for(rows.n, scale=3.0))
    np.testing.assert_array_equal(p, np.full(rows.n, 0.5))


def test_rba_ratio_scales_the_score(rows):
    model = rba()
    p1 = model.predict_proba(rows, density_for(rows.n, scale=1.0))
    p2 = model.predict_proba(rows, density_for(rows.n, scale=2.0))
    z = rows.features @ model.theta[:2] + model.theta[2] * rows.attribute \
        + model.theta[3]
    np.testing.assert_allclose(np.log(p2 / (1 - p2)),
                               2 * np.log(p1 / (1 - p1)), atol=1e-9)
    np.testing.assert_allclose(np.log(p1 / (1 - p1)), z, atol=1e-9)


def test_rba_requires_density(rows):
    with pytest.raises(DataError, match="density"):
        rba().predict_proba(rows)
    with pytest.raises(DataError, match="density"):
        rba().predict_proba(rows, density_for(rows.n + 1))


def test_fair_model_iid_ignores_density(rows):
    model = fair(iid=True)
    p_none = model.predict_proba(rows)
    p_with = model.predict_proba(rows, density_for(rows.n, scale=2.0))
    np.testing.assert_array_equal(p_none, p_with)


def test_fair_model_shift_requires_density(rows):
    with pytest.raises(DataError, match="density"):
        fair(iid=False).predict_proba(rows)


def test_fair_model_pairs_warp_by_group(rows):
    model = fair(iid=True)
    p, q = model.predict_pairs(rows)
    assert np.all((p > 0) & (p <= 1))
    assert np.all((q >= 0) & (q <= 1))
    # mu > 0: the advantaged slot (a=1) has muf > 0 so q > p, and vice versa
    assert np.all(q[rows.attribute == 1] > p[rows.attribute == 1])
    assert np.all(q[rows.attribute == 0] < p[rows.attribute == 0])


def test_hardt_needs_rng_and_emits_hard_labels(rows):
    model = hardt()
    with pytest.raises(DataError, match="rng"):
        model.predict_proba(rows)
    rng = np.random.default_rng(3)
    out = model.predict_proba(rows, rng=rng)
    assert set(np.unique(out)) <= {0.0, 1.0}
    again = model.predict_proba(rows, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(out, again)


def test_hardt_mixing_rates_index_by_group_and_base(rows):
    mix = hardt().mixing
    a = np.array([0, 0, 1, 1])
    b = np.array([0, 1, 0, 1])
    np.testing.assert_array_equal(mix.positive_rate(a, b),
                                  [0.1, 0.9, 0.0, 1.0])


# ------------------------------------------------------------ round-trips


@pytest.mark.parametrize("make", [linear, lambda: linear("lr_iw"), rba,
                                  fair, lambda: fair(iid=True), hardt],
                         ids=["lr", "lr_iw", "rba", "fair_shift", "fair_iid",
                              "hardt"])
def test_json_round_trip_preserves_predictions(tmp_path, rows, make):
    model = make()
    path = tmp_path / "model.json"
    save_model(model, str(path))
    back = load_model(str(path))
    assert type(back) is type(model)
    assert back.method == model.method
    assert back.feature_map == model.feature_map
    assert back.C == model.C
    kwargs = {}
    if isinstance(model, (RbaModel, FairRobustModel)) and not getattr(
            model, "iid", False):
        kwargs["density"] = density_for(rows.n, scale=1.5)
    if isinstance(model, HardtModel):
        kwargs["rng"] = np.random.default_rng(0)
        p1 = model.predict_proba(rows, **kwargs)
        kwargs["rng"] = np.random.default_rng(0)
        p2 = back.predict_proba(rows, **kwargs)
    else:
        p1 = model.predict_proba(rows, **kwargs)
        p2 = back.predict_proba(rows, **kwargs)
    np.testing.assert_array_equal(p1, p2)


def test_round_trip_preserves_fair_model_fields():
    doc = model_to_dict(fair())
    back = model_from_dict(json.loads(json.dumps(doc)))
    assert back.params.mu == 0.42
    assert back.params.lambda_0 == -0.11
    assert back.marginals == GroupMarginals(g_tilde_0=0.3, g_tilde_1=0.25)
    assert back.criterion is FairnessCriterion.EQUALIZED_OPPORTUNITY
    assert back.iid is False
    assert back.mu_bracketed is True
    assert back.density_fingerprint == "abc123"


def test_model_document_shape():
    doc = model_to_dict(linear())
    assert doc["format"] == "fairshift-model"
    assert doc["version"] == 1
    assert doc["method"] == "lr"
    assert doc["theta"] == [0.4, -1.2, 0.3, 0.1]


def test_from_dict_rejects_foreign_documents():
    with pytest.raises(DataError, match="model document"):
        model_from_dict({"format": "something-else"})
    doc = model_to_dict(linear())
    doc["method"] = "gradient_boosting"
    with pytest.raises(DataError, match="gradient_boosting"):
        model_from_dict(doc)


def test_load_model_wraps_file_errors(tmp_path):
    with pytest.raises(DataError, match="cannot read model"):
        load_model(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError, match="cannot read model"):
        load_model(str(bad))
