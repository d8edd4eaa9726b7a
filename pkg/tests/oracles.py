"""Independent reference implementations used by the tests.

Nothing here calls into the package's algorithms; each oracle recomputes a
quantity from first principles (explicit path lists, matrix algebra).
"""

import itertools

import numpy as np

from fairlens.graph import validate_graph
from fairlens.scm import BernoulliRoot, LinearGaussian, build_model


def random_dag(rng, n_nodes, p_edge=0.4, names=None):
    names = names or [f"V{i}" for i in range(n_nodes)]
    order = list(rng.permutation(n_nodes))
    edges = []
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < p_edge:
            edges.append((names[order[i]], names[order[j]]))
    return names, edges


def random_linear_model(rng, nodes, edges, sensitive=None, outcome=None, bernoulli=(), zero_prob=0.0):
    g = validate_graph(nodes, edges, None, sensitive, outcome)
    mechs = {}
    for n in nodes:
        parents = g.parents(n)
        if n in bernoulli:
            mechs[n] = BernoulliRoot(float(rng.uniform(0.2, 0.8)))
            continue
        coef = {}
        for p in parents:
            c = float(rng.uniform(0.5, 2.0) * rng.choice([-1, 1]))
            coef[p] = 0.0 if rng.random() < zero_prob else c
        mechs[n] = LinearGaussian(float(rng.normal()), coef, float(rng.uniform(0.5, 1.5)))
    return build_model(g, mechs)


# ---------------------------------------------------------------- paths

def undirected_simple_paths(edges, src, dst):
    adj = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    out = []

    def walk(path):
        node = path[-1]
        if node == dst:
            out.append(tuple(path))
            return
        for nxt in sorted(adj.get(node, ())):
            if nxt not in path:
                walk(path + [nxt])

    walk([src])
    return out


def directed_paths(edges, src, dst):
    children = {}
    for u, v in edges:
        children.setdefault(u, []).append(v)
    out = []

    def walk(path):
        if path[-1] == dst:
            out.append(tuple(path))
            return
        for c in children.get(path[-1], ()):
            walk(path + [c])

    walk([src])
    return out


def descendants(edges, n):
    seen, stack = set(), [n]
    while stack:
        cur = stack.pop()
        for u, v in edges:
            if u == cur and v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def path_blocked(edges, nodes, z):
    """Blocked iff some interior node is a non-collider in z, or a collider with no member of z at or below it."""
    es = set(edges)
    z = set(z)
    for i in range(1, len(nodes) - 1):
        prev, n, nxt = nodes[i - 1], nodes[i], nodes[i + 1]
        collider = (prev, n) in es and (nxt, n) in es
        if not collider and n in z:
            return True
        if collider and n not in z and not (descendants(edges, n) & z):
            return True
    return False


def d_separated(edges, xs, ys, z):
    for x in xs:
        for y in ys:
            for p in undirected_simple_paths(edges, x, y):
                if not path_blocked(edges, p, z):
                    return False
    return True


# ---------------------------------------------------------------- linear algebra

def linear_sem_moments(m):
    """Mean and covariance of a model with Bernoulli roots and linear-Gaussian nodes.

    X = c + B X + e with independent e; Bernoulli roots contribute mean p and
    variance p(1-p).  Returns (nodes, mean, cov).
    """
    nodes = list(m.graph.nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    k = len(nodes)
    B = np.zeros((k, k))
    c = np.zeros(k)
    omega = np.zeros(k)
    for n in nodes:
        mech = m.mechanisms[n]
        if isinstance(mech, BernoulliRoot):
            c[idx[n]] = mech.p
            omega[idx[n]] = mech.p * (1 - mech.p)
        else:
            c[idx[n]] = mech.intercept
            omega[idx[n]] = mech.noise_std ** 2
            for p, w in mech.coefficients.items():
                B[idx[n], idx[p]] = w
    T = np.linalg.inv(np.eye(k) - B)
    return nodes, T @ c, T @ np.diag(omega) @ T.T


def partial_correlation(cov, i, j, given):
    idx = [i, j] + list(given)
    sub = cov[np.ix_(idx, idx)]
    prec = np.linalg.pinv(sub)
    return -prec[0, 1] / np.sqrt(prec[0, 0] * prec[1, 1])


def gaussian_condition(mean, cov, target, observed, values):
    """E[x_target | x_observed = values] for a joint Gaussian."""
    s_to = cov[target, observed]
    s_oo = cov[np.ix_(observed, observed)]
    return float(mean[target] + s_to @ np.linalg.solve(s_oo, np.asarray(values) - mean[observed]))


def path_product_pse(m, active_edges, a, a_bar):
    """Sum over causal paths A ~> Y whose first link is active of the coefficient products, times (a - a_bar)."""
    g = m.graph
    total = 0.0
    for p in directed_paths(g.edges, g.sensitive, g.outcome):
        if (p[0], p[1]) not in active_edges:
            continue
        prod = 1.0
        for u, v in zip(p, p[1:]):
            prod *= m.mechanisms[v].coefficients[u]
        total += prod
    return total * (a - a_bar)
