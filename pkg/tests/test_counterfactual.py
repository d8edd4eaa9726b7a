import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from fairlens.counterfactual import (
    abduct,
    build_twin,
    corrected_descendant,
    counterfactual_outcome,
    fair_predict,
    fair_prediction,
)
from fairlens.effects import MC, PathInterventionSpec, pse
from fairlens.errors import InconsistentRecord, LabelUnknown, NotDescendant
from fairlens.graph import validate_graph
from fairlens.presets import preset
from fairlens.scm import (
    BernoulliRoot,
    Expression,
    LinearGaussian,
    build_model,
    conditional_mean,
    eval_record,
    evaluate,
    intervene,
    sample,
)

# college preset coefficients
TH_Y, TH_YA, TH_YQ, TH_YD = 0.2, -1.0, 0.5, 0.3
TH_Q, TH_D, TH_DA = 1.0, 0.5, 4.0


def college(labels=None):
    m = preset("college").model
    if labels is None:
        return m
    return build_model(m.graph.with_labels(labels), m.mechanisms)


def tanh_model():
    g = validate_graph(["A", "D", "Y"], [("A", "D"), ("D", "Y")], {("A", "D"): "unfair", ("D", "Y"): "fair"}, "A", "Y")
    return build_model(g, {
        "A": BernoulliRoot(0.5),
        "D": Expression("tanh(2 * A)", 1.0),
        "Y": LinearGaussian(0.0, {"D": 1.0}),
    })


records = st.fixed_dictionaries({
    "A": st.sampled_from([0.0, 1.0]),
    "Q": st.floats(-5, 5),
    "D": st.floats(-5, 10),
    "Y": st.floats(-10, 10),
})


# ---------------------------------------------------------------- twin network

def test_twin_duplicates_descendants_only():
    twin = build_twin(college(), PathInterventionSpec(0.0, 1.0, {("A", "D")}))
    assert dict(twin.duplicated) == {"D": "D_a", "Y": "Y_ā(D_a)"}
    assert set(twin.shared) == {"A", "Q"}
    assert set(twin.shared_noise) == {"D", "Y"}


def test_all_baseline_twin_is_intervention():
    m = college()
    twin = build_twin(m, PathInterventionSpec(0.0, 1.0, set()))
    ds = sample(m, 1, seed=0)
    rng = np.random.default_rng(0)
    noise = {"A": 0.3, "Q": rng.normal(), "D": rng.normal(), "Y": rng.normal()}
    got = twin.counterfactual(noise, 1.0)
    want = evaluate(intervene(m, {"A": 0.0}), noise)
    assert {k: float(v) for k, v in got.items() if k != "A"} == {k: float(v) for k, v in want.items() if k != "A"}
    assert len(ds) == 1


def test_no_descendants_no_duplication():
    g = validate_graph(["A", "Y"], [], None, "A", "Y")
    m = build_model(g, {"A": BernoulliRoot(0.5), "Y": LinearGaussian(0.0, {})})
    assert dict(build_twin(m, PathInterventionSpec(0.0, 1.0)).duplicated) == {}


def test_twin_factual_marginal_matches_base_model():
    m = college()
    twin = build_twin(m, PathInterventionSpec(0.0, 1.0, {("A", "D")}))
    n = 100_000
    t = twin.sample(n, seed=101)
    base = sample(m, n, seed=202)
    for node in ("Q", "D", "Y"):
        assert stats.ks_2samp(t.column(node), base.column(node)).statistic < 0.01


# ---------------------------------------------------------------- abduction

@settings(max_examples=100, deadline=None)
@given(records)
def test_abduction_deltas_match_hand_formulas(rec):
    post = abduct(college(), rec)
    a, q, d, y = rec["A"], rec["Q"], rec["D"], rec["Y"]
    assert post.exact
    assert post.deltas["Q"] == pytest.approx(q - TH_Q, abs=1e-12)
    assert post.deltas["D"] == pytest.approx(d - TH_D - TH_DA * a, abs=1e-12)
    assert post.deltas["Y"] == pytest.approx(y - TH_Y - TH_YA * a - TH_YQ * q - TH_YD * d, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(records)
def test_abduction_round_trip(rec):
    m = college()
    post = abduct(m, rec)
    back = eval_record(m, post.deltas, forced={"A": rec["A"]})
    for k, v in rec.items():
        assert back[k] == pytest.approx(v, abs=1e-9)


def test_noiseless_record_gives_zero_deltas():
    m = college()
    rec = eval_record(m, {"Q": 0.0, "D": 0.0, "Y": 0.0}, forced={"A": 1.0})
    post = abduct(m, rec)
    assert all(abs(post.deltas[k]) < 1e-12 for k in ("Q", "D", "Y"))


def test_partial_record_posterior_matches_gaussian_conditioning():
    m = preset("mediation").model
    rec = {"A": 1.0, "C": 0.4, "L": 9.0, "Y": 25.0}
    post = abduct(m, rec, n_samples=200_000, seed=4)
    assert not post.exact
    fixed = build_model(m.graph, {**m.mechanisms, "A": BernoulliRoot(1.0)})
    order, mean, cov = oracles.linear_sem_moments(fixed)
    idx = {n: i for i, n in enumerate(order)}
    want = oracles.gaussian_condition(mean, cov, idx["M"], [idx["C"], idx["L"], idx["Y"]], [0.4, 9.0, 25.0])
    assert abs(post.mean("M") - want) <= 4 * post.std_error("M")
    assert conditional_mean(m, "M", rec) == pytest.approx(want, abs=1e-10)


def test_zero_noise_mechanism_must_match():
    m = preset("music").model
    with pytest.raises(InconsistentRecord):
        abduct(m, {"A": 1.0, "M": 0.0, "X": 5.0, "Y": 0.0})


# ---------------------------------------------------------------- counterfactual outcomes

@settings(max_examples=100, deadline=None)
@given(records)
def test_flipping_direct_link_shifts_outcome(rec):
    a = rec["A"]
    a_bar = 1.0 - a
    spec = PathInterventionSpec(a_bar, a, {("A", "D")})
    got = counterfactual_outcome(college(), rec, spec).value
    assert got == pytest.approx(rec["Y"] - TH_YA * a + TH_YA * a_bar, abs=1e-9)


def test_counterfactual_instance_value():
    rec = {"A": 1.0, "Q": 0.0, "D": 0.0, "Y": 2.0}
    spec = PathInterventionSpec(0.0, 1.0, {("A", "D")})
    assert counterfactual_outcome(college(), rec, spec).value == pytest.approx(3.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(records)
def test_factual_regime_is_identity(rec):
    a = rec["A"]
    spec = PathInterventionSpec(1.0 - a, a, {("A", "D"), ("A", "Y")})
    assert counterfactual_outcome(college(), rec, spec).value == pytest.approx(rec["Y"], abs=1e-9)


def test_counterfactual_mean_is_conditional_mean_minus_pse():
    m = college()
    rng = np.random.default_rng(12)
    path = pse(m, PathInterventionSpec(0.0, 1.0, {("A", "Y")})).value
    for _ in range(50):
        rec = {"A": 1.0, "Q": float(rng.normal(1, 1)), "D": float(rng.normal(4.5, 1))}
        cf = counterfactual_outcome(m, rec, PathInterventionSpec(0.0, 1.0, {("A", "D")}), include_outcome=False)
        assert cf.value == pytest.approx(conditional_mean(m, "Y", rec) - path, abs=1e-9)


def test_conditional_minus_pse_fails_nonlinear():
    m = preset("college-nonlinear").model
    rec = {"A": 1.0, "Q": 0.5, "D": 1.0}
    n = 100_000
    cf = counterfactual_outcome(m, rec, PathInterventionSpec(0.0, 1.0, {("A", "D")}), n_samples=n, seed=1,
                                include_outcome=False, method=MC)
    cond = counterfactual_outcome(m, rec, PathInterventionSpec(0.0, 1.0, {("A", "D"), ("A", "Y")}), n_samples=n,
                                  seed=2, include_outcome=False, method=MC)
    path = pse(m, PathInterventionSpec(0.0, 1.0, {("A", "Y")}), method=MC, n=n, seed=3)
    # by hand: cf = d + q/2, conditional = 2d + q/2, path effect = tanh(0) = 0
    assert cf.value == pytest.approx(1.25, abs=5 * cf.std_error + 1e-12)
    assert cond.value == pytest.approx(2.25, abs=5 * cond.std_error + 1e-12)
    assert abs(cf.value - (cond.value - path.value)) > 0.01


# ---------------------------------------------------------------- corrected descendants

@settings(max_examples=100, deadline=None)
@given(records)
def test_corrected_descendant_linear(rec):
    m = college()
    a = rec["A"]
    got = corrected_descendant(m, rec, "D").value
    assert got == pytest.approx(rec["D"] - TH_DA * a + TH_DA * (1 - a), abs=1e-9)


def test_corrected_instance():
    got = corrected_descendant(college(), {"A": 1.0, "Q": 0.0, "D": 5.2}, "D").value
    assert got == pytest.approx(1.2, abs=1e-12)


def test_zero_effect_leaves_descendant():
    m = college()
    mechs = dict(m.mechanisms)
    mechs["D"] = LinearGaussian(0.5, {"A": 0.0}, 1.0)
    m0 = build_model(m.graph, mechs)
    assert corrected_descendant(m0, {"A": 1.0, "D": 2.5}, "D").value == pytest.approx(2.5, abs=1e-12)


def test_corrected_tanh_samples():
    m = tanh_model()
    d = 0.7
    res = corrected_descendant(m, {"A": 1.0, "D": d}, "D", n_samples=500, seed=2)
    assert res.samples is not None
    np.testing.assert_allclose(res.samples, d - np.tanh(2.0), atol=1e-12)


def test_corrected_requires_descendant():
    with pytest.raises(NotDescendant):
        corrected_descendant(college(), {"A": 1.0, "Q": 0.0}, "Q")


def test_mc_correction_converges_to_closed_form():
    m = college()
    rec = {"A": 1.0, "Q": 0.2, "D": 3.9}
    closed = corrected_descendant(m, rec, "Y").value
    mc = corrected_descendant(m, rec, "Y", n_samples=100_000, seed=6, method=MC)
    assert mc.std_error > 0
    assert abs(mc.value - closed) <= 4 * mc.std_error


# ---------------------------------------------------------------- fair predictions

def test_fair_predict_direct_link_unfair():
    m = college({("A", "D"): "fair", ("A", "Y"): "unfair"})
    rec = {"A": 1.0, "Q": 0.8, "D": 4.0}
    want = TH_Y + TH_YA * 0.0 + TH_YQ * 0.8 + TH_YD * 4.0
    assert fair_predict(m, rec) == pytest.approx(want, abs=1e-12)
    assert fair_predict(m, rec) == pytest.approx(conditional_mean(m, "Y", {**rec, "A": 0.0}), abs=1e-12)


def test_fair_predict_both_links_unfair():
    m = college()
    rec = {"A": 1.0, "Q": 0.8, "D": 4.0}
    d_fair = 4.0 - TH_DA * 1.0 + TH_DA * 0.0
    want = TH_Y + TH_YQ * 0.8 + TH_YD * d_fair
    assert fair_predict(m, rec) == pytest.approx(want, abs=1e-12)


def test_fair_predict_without_unfair_links_is_regression():
    m = college({("A", "D"): "fair", ("A", "Y"): "fair"})
    rec = {"A": 1.0, "Q": 0.8, "D": 4.0}
    assert fair_predict(m, rec) == pytest.approx(conditional_mean(m, "Y", rec), abs=1e-12)
    assert fair_predict(college(), rec, unfair_edge_set=set()) == pytest.approx(conditional_mean(m, "Y", rec))


def test_unlabelled_links_are_rejected():
    m = college()
    m = build_model(validate_graph(m.graph.nodes, m.graph.edges, None, "A", "Y"), m.mechanisms)
    with pytest.raises(LabelUnknown):
        fair_predict(m, {"A": 1.0, "Q": 0.0, "D": 1.0})


def test_fair_prediction_result_is_exact_for_linear():
    res = fair_prediction(college(), {"A": 0.0, "Q": 1.0, "D": 0.5})
    assert res.exact
    assert res.to_dict()["method"] == "exact"
