import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fairlens.errors import (
    CycleDetected,
    DuplicateEdge,
    EndpointConditioned,
    PathBudgetExceeded,
    UnknownNode,
)
from fairlens.graph import (
    Path,
    audit_paths,
    back_door_paths,
    d_separated,
    enumerate_paths,
    is_blocked,
    is_collider,
    minimal_adjustment_sets,
    recommend_criteria,
    relatives,
    satisfies_backdoor,
    validate_graph,
)

FIG_NODES = ["X1", "X2", "X3", "X4"]
FIG_EDGES = [("X1", "X3"), ("X2", "X3"), ("X3", "X4"), ("X2", "X4")]
COLLEGE_EDGES = [("A", "D"), ("A", "Y"), ("D", "Y"), ("Q", "Y")]
WEB_EDGES = [("E", "A"), ("E", "C"), ("X", "C"), ("X", "Y"), ("C", "A"), ("C", "Y"), ("A", "Y")]
CONFOUNDER_EDGES = [("C", "A"), ("C", "Y"), ("A", "Y")]


def fig_graph():
    return validate_graph(FIG_NODES, FIG_EDGES)


def path_strings(paths):
    return sorted(str(p) for p in paths)


@st.composite
def dags(draw, max_nodes=7):
    n = draw(st.integers(2, max_nodes))
    names = [f"V{i}" for i in range(n)]
    perm = draw(st.permutations(names))
    edges = [
        (perm[i], perm[j])
        for i, j in itertools.combinations(range(n), 2)
        if draw(st.booleans())
    ]
    return validate_graph(names, edges)


# ---------------------------------------------------------------- validation

def test_four_node_graph_is_a_dag():
    g = fig_graph()
    order = g.topological_order()
    for u, v in FIG_EDGES:
        assert order.index(u) < order.index(v)


def test_back_link_creates_cycle():
    with pytest.raises(CycleDetected):
        validate_graph(FIG_NODES, FIG_EDGES + [("X4", "X1")])


def test_single_node_graph():
    g = validate_graph(["A"], [])
    assert g.topological_order() == ("A",)


def test_unknown_and_duplicate_edges_rejected():
    with pytest.raises(UnknownNode):
        validate_graph(["A"], [("A", "B")])
    with pytest.raises(DuplicateEdge):
        validate_graph(["A", "B"], [("A", "B"), ("A", "B")])


def test_default_label_is_unknown():
    g = validate_graph(["A", "B"], [("A", "B")])
    assert g.label("A", "B") == "unknown"


# ---------------------------------------------------------------- relatives

def test_relatives_of_collider():
    r = relatives(fig_graph(), "X3")
    assert r["parents"] == {"X1", "X2"}
    assert r["descendants"] == {"X4"}


def test_isolated_node_has_no_relatives():
    g = validate_graph(["A", "B"], [])
    assert all(not s for s in relatives(g, "A").values())


def test_chain_descendants():
    g = validate_graph(["A", "B", "C"], [("A", "B"), ("B", "C")])
    assert relatives(g, "A")["descendants"] == {"B", "C"}
    assert relatives(g, "C")["ancestors"] == {"A", "B"}


# ---------------------------------------------------------------- paths

def test_paths_between_parents_of_collider():
    paths = enumerate_paths(fig_graph(), "X1", "X2")
    assert path_strings(paths) == ["X1->X3->X4<-X2", "X1->X3<-X2"]


def test_college_paths():
    g = validate_graph(["A", "D", "Q", "Y"], COLLEGE_EDGES)
    assert path_strings(enumerate_paths(g, "A", "Y")) == ["A->D->Y", "A->Y"]


def test_disconnected_nodes_have_no_paths():
    g = validate_graph(["A", "B"], [])
    assert enumerate_paths(g, "A", "B") == []


def test_path_budget():
    nodes = [f"N{i}" for i in range(9)]
    edges = list(itertools.combinations(nodes, 2))
    g = validate_graph(nodes, edges)
    with pytest.raises(PathBudgetExceeded):
        enumerate_paths(g, "N0", "N8", budget=100)


@settings(max_examples=60, deadline=None)
@given(dags())
def test_paths_match_oracle(g):
    src, dst = g.nodes[0], g.nodes[-1]
    ours = {p.nodes for p in enumerate_paths(g, src, dst)}
    assert ours == set(oracles.undirected_simple_paths(g.edges, src, dst))


# ---------------------------------------------------------------- colliders and blocking

def test_collider_and_non_collider():
    g = fig_graph()
    assert is_collider(Path.from_nodes(g, ["X1", "X3", "X2"]), "X3")
    assert not is_collider(Path.from_nodes(g, ["X2", "X3", "X4"]), "X3")
    chain = validate_graph(["A", "D", "Y"], [("A", "D"), ("D", "Y")])
    assert not is_collider(Path.from_nodes(chain, ["A", "D", "Y"]), "D")


def test_blocking_on_collider_web():
    g = validate_graph(["A", "C", "E", "X", "Y"], WEB_EDGES)
    p1 = Path.from_nodes(g, ["A", "C", "X", "Y"])
    p2 = Path.from_nodes(g, ["A", "E", "C", "X", "Y"])
    assert is_blocked(p1, {"C"}, g)
    assert not is_blocked(p2, {"C"}, g)
    assert is_blocked(p2, {"C", "X"}, g)


def test_conditioning_on_endpoint_rejected():
    g = validate_graph(["A", "C", "E", "X", "Y"], WEB_EDGES)
    with pytest.raises(EndpointConditioned):
        is_blocked(Path.from_nodes(g, ["A", "C", "Y"]), {"A"}, g)


@settings(max_examples=80, deadline=None)
@given(dags(), st.data())
def test_blocking_matches_two_rule_oracle(g, data):
    src, dst = g.nodes[0], g.nodes[-1]
    interior = [n for n in g.nodes if n not in (src, dst)]
    z = data.draw(st.sets(st.sampled_from(interior)) if interior else st.just(set()))
    for p in enumerate_paths(g, src, dst):
        assert is_blocked(p, z, g) == oracles.path_blocked(g.edges, p.nodes, z)


# ---------------------------------------------------------------- d-separation

def test_music_collider_closes_path():
    g = validate_graph(["A", "M", "X", "Y"], [("A", "X"), ("M", "X"), ("M", "Y")])
    assert d_separated(g, {"A"}, {"Y"}, set())
    assert not d_separated(g, {"A"}, {"Y"}, {"X"})


def test_disconnected_node_is_separated():
    g = validate_graph(["A", "B"], [])
    assert d_separated(g, {"A"}, {"B"})


@settings(max_examples=80, deadline=None)
@given(dags(), st.data())
def test_d_separation_matches_path_oracle(g, data):
    x, y = g.nodes[0], g.nodes[-1]
    rest = [n for n in g.nodes if n not in (x, y)]
    z = data.draw(st.sets(st.sampled_from(rest)) if rest else st.just(set()))
    expected = oracles.d_separated(g.edges, [x], [y], z)
    assert d_separated(g, {x}, {y}, z) == expected
    assert d_separated(g, {y}, {x}, z) == expected


# ---------------------------------------------------------------- back-door

def test_confounder_backdoor():
    g = validate_graph(["A", "C", "Y"], CONFOUNDER_EDGES)
    assert satisfies_backdoor(g, {"C"}, "A", "Y")
    assert not satisfies_backdoor(g, set(), "A", "Y")
    assert minimal_adjustment_sets(g, "A", "Y") == [frozenset({"C"})]


def test_no_backdoor_path():
    g = validate_graph(["A", "Y"], [("A", "Y")])
    assert satisfies_backdoor(g, set(), "A", "Y")
    assert minimal_adjustment_sets(g, "A", "Y") == [frozenset()]


def test_collider_web_adjustment_sets():
    g = validate_graph(["A", "C", "E", "X", "Y"], WEB_EDGES)
    sets = minimal_adjustment_sets(g, "A", "Y")
    assert frozenset({"C", "X"}) in sets
    assert frozenset({"C", "E"}) in sets
    # brute-force oracle: minimal subsets blocking every back-door path
    cands = ["C", "E", "X"]
    valid = []
    for k in range(len(cands) + 1):
        for c in itertools.combinations(cands, k):
            ok = all(
                oracles.path_blocked(g.edges, p, set(c))
                for p in oracles.undirected_simple_paths(g.edges, "A", "Y")
                if (p[1], p[0]) in set(g.edges)
            )
            if ok and not any(set(v) <= set(c) for v in valid):
                valid.append(c)
    assert sorted(sets, key=sorted) == sorted((frozenset(v) for v in valid), key=sorted)


def test_descendant_in_adjustment_set_fails():
    g = validate_graph(["A", "C", "M", "Y"], CONFOUNDER_EDGES + [("A", "M"), ("M", "Y")])
    assert not satisfies_backdoor(g, {"C", "M"}, "A", "Y")


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=7), st.data())
def test_backdoor_supersets(g, data):
    """Adding non-descendants that open no collider keeps every back-door path blocked."""
    a, y = g.nodes[0], g.nodes[-1]
    if a in g.descendants(y):
        return
    rest = [n for n in g.nodes if n not in (a, y) and n not in g.descendants(a)]
    c = data.draw(st.sets(st.sampled_from(rest)) if rest else st.just(set()))
    if not satisfies_backdoor(g, c, a, y):
        return
    for extra in rest:
        bigger = set(c) | {extra}
        opens = any(
            is_blocked(p, c, g) and not is_blocked(p, bigger, g) for p in back_door_paths(g, a, y)
        )
        if not opens:
            assert satisfies_backdoor(g, bigger, a, y)


# ---------------------------------------------------------------- audit and recommendation

def labelled_college(ad="fair", ay="unfair", dy="fair"):
    labels = {("A", "D"): ad, ("A", "Y"): ay, ("D", "Y"): dy}
    return validate_graph(["A", "D", "Q", "Y"], COLLEGE_EDGES, labels, "A", "Y")


def test_audit_college_labels():
    audit = audit_paths(labelled_college())
    got = {str(e.path): e.fairness for e in audit.causal_paths()}
    assert got == {"A->Y": "unfair", "A->D->Y": "fair"}


def test_audit_hiring():
    g = validate_graph(["A", "E", "Y"], [("E", "A"), ("E", "Y")], None, "A", "Y")
    audit = audit_paths(g)
    assert audit.causal_paths() == []
    [bd] = audit.back_door_paths()
    assert str(bd.path) == "A<-E->Y"
    assert bd.problematic is False


def test_all_unknown_labels():
    g = validate_graph(["A", "D", "Q", "Y"], COLLEGE_EDGES, None, "A", "Y")
    assert {e.fairness for e in audit_paths(g).entries} == {"unknown"}


@settings(max_examples=60, deadline=None)
@given(dags(), st.data())
def test_path_fairness_rule(g, data):
    labels = {e: data.draw(st.sampled_from(["fair", "unfair", "unknown"])) for e in g.edges}
    g = g.with_labels(labels).with_roles(g.nodes[0], g.nodes[-1])
    for e in audit_paths(g).entries:
        ls = [labels[x] for x in e.path.edges()]
        if "unfair" in ls:
            assert e.fairness == "unfair"
        elif all(v == "fair" for v in ls):
            assert e.fairness == "fair"
        else:
            assert e.fairness == "unknown"


def test_recommend_all_unfair():
    r = recommend_criteria(audit_paths(labelled_college("unfair", "unfair", "unfair")))
    assert r.dp_appropriate is True


def test_recommend_all_fair():
    r = recommend_criteria(audit_paths(labelled_college("fair", "fair", "fair")))
    assert r.dp_appropriate is False
    assert r.error_rate_parity_appropriate is True
    assert r.calibration_appropriate is True


def test_recommend_mixed():
    r = recommend_criteria(audit_paths(labelled_college()))
    assert r.calibration_appropriate is False
    assert r.error_rate_parity_appropriate is False


def test_recommend_unknown_is_undecided():
    r = recommend_criteria(audit_paths(labelled_college("unknown", "fair", "fair")))
    assert r.dp_appropriate is None or r.calibration_appropriate is None


@settings(max_examples=40, deadline=None)
@given(dags())
def test_topological_order_exists(g):
    order = g.topological_order()
    assert sorted(order) == sorted(g.nodes)
    for u, v in g.edges:
        assert order.index(u) < order.index(v)


def test_linear_soundness_on_random_dags():
    rng = np.random.default_rng(7)
    for _ in range(20):
        nodes, edges = oracles.random_dag(rng, 6)
        m = oracles.random_linear_model(rng, nodes, edges)
        _, _, cov = oracles.linear_sem_moments(m)
        idx = {n: i for i, n in enumerate(nodes)}
        for u, v in itertools.combinations(nodes, 2):
            z = [n for n in nodes if n not in (u, v) and rng.random() < 0.4]
            if d_separated(m.graph, {u}, {v}, z):
                rho = oracles.partial_correlation(cov, idx[u], idx[v], [idx[n] for n in z])
                assert abs(rho) < 1e-9
