"""Structural causal models over a :class:`~fairlens.graph.CausalGraph`.

Each node owns one mechanism.  Continuous mechanisms add a zero-mean Gaussian
noise term ``eps ~ N(0, sigma^2)``; Bernoulli mechanisms consume a uniform
``u`` in (0, 1) and fire when ``u < p(parents)``.  The noise value of a node
is therefore a float in both cases, which is what :func:`eval_record` and the
counterfactual machinery pass around.

Random numbers come from Philox (counter based).  Stream ``(seed, node
index)`` at counter position ``r`` produces record ``r``'s noise, so sampling
is reproducible regardless of how records are split across workers.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
from numpy.random import Philox
from scipy.special import expit, ndtri

from . import formula
from .errors import (
    BadParameter,
    DegenerateConditioning,
    MissingMechanism,
    MissingNoise,
    ParentMismatch,
    SingularSystem,
    UnknownNode,
    UnsupportedMechanism,
)
from .graph import CausalGraph, validate_graph

MASK64 = (1 << 64) - 1
MAX_BERNOULLI_CONFIGS = 20
DEGENERATE_PROBABILITY = 1e-12


@dataclass(frozen=True)
class BernoulliRoot:
    p: float

    @property
    def parents(self):
        return ()

    kind = "bernoulli"
    binary = True
    stochastic = True
    additive = False


@dataclass(frozen=True)
class BernoulliLogistic:
    intercept: float
    coefficients: Mapping[str, float]

    @property
    def parents(self):
        return tuple(sorted(self.coefficients))

    def __hash__(self):
        return hash((self.intercept, tuple(sorted(self.coefficients.items()))))

    kind = "logistic"
    binary = True
    stochastic = True
    additive = False


@dataclass(frozen=True)
class LinearGaussian:
    intercept: float
    coefficients: Mapping[str, float]
    noise_std: float = 1.0

    @property
    def parents(self):
        return tuple(sorted(self.coefficients))

    def __hash__(self):
        return hash((self.intercept, tuple(sorted(self.coefficients.items())), self.noise_std))

    kind = "linear"
    binary = False
    stochastic = True
    additive = True


@dataclass(frozen=True)
class Expression:
    """``source`` is a formula over parent names and ``eps``."""

    source: str = field(compare=False)
    noise_std: float = 1.0
    tree: formula.Node = field(default=None, repr=False)
    additive_part: Optional[formula.Node] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        tree = self.tree if self.tree is not None else formula.parse_formula(self.source)
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "additive_part", formula.split_additive_noise(tree))

    @property
    def parents(self):
        return tuple(sorted(formula.variables(self.tree) - {formula.NOISE}))

    @property
    def additive(self):
        return self.additive_part is not None

    kind = "expr"
    binary = False
    stochastic = True


@dataclass(frozen=True)
class Constant:
    """Point mass left behind by an intervention."""

    value: float

    @property
    def parents(self):
        return ()

    kind = "constant"
    binary = False
    stochastic = False
    additive = False


Mechanism = Union[BernoulliRoot, BernoulliLogistic, LinearGaussian, Expression, Constant]


def mechanism_to_dict(mech) -> dict:
    if isinstance(mech, BernoulliRoot):
        return {"kind": "bernoulli", "p": mech.p}
    if isinstance(mech, BernoulliLogistic):
        return {"kind": "logistic", "intercept": mech.intercept, "coef": dict(sorted(mech.coefficients.items()))}
    if isinstance(mech, LinearGaussian):
        return {"kind": "linear", "intercept": mech.intercept,
                "coef": dict(sorted(mech.coefficients.items())), "sigma": mech.noise_std}
    if isinstance(mech, Expression):
        return {"kind": "expr", "expr": formula.to_source(mech.tree), "sigma": mech.noise_std}
    return {"kind": "constant", "value": mech.value}


@dataclass(frozen=True)
class StructuralModel:
    graph: CausalGraph
    mechanisms: Mapping[str, Mechanism]

    def __hash__(self):
        return hash(fingerprint(self))

    @property
    def nodes(self):
        return self.graph.nodes

    @property
    def order(self):
        return self.graph.topological_order()

    def stream_index(self, node: str) -> int:
        return self.graph.nodes.index(node)

    def is_binary(self, node: str) -> bool:
        return self.mechanisms[node].binary

    def stochastic_nodes(self):
        return [n for n in self.order if self.mechanisms[n].stochastic]


def fingerprint(m: StructuralModel) -> str:
    payload = {
        "nodes": list(m.graph.nodes),
        "edges": [list(e) for e in m.graph.sorted_edges()],
        "labels": {f"{u}->{v}": lab for (u, v), lab in sorted(m.graph.edge_labels.items())},
        "sensitive": m.graph.sensitive,
        "outcome": m.graph.outcome,
        "mechanisms": {n: mechanism_to_dict(m.mechanisms[n]) for n in m.graph.nodes},
    }
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def build_model(g: CausalGraph, mechanisms: Mapping[str, Mechanism]) -> StructuralModel:
    """Bind mechanisms to ``g`` after checking coverage, parents and parameters."""
    for n in mechanisms:
        if n not in g.nodes:
            raise UnknownNode(n)
    for n in g.nodes:
        if n not in mechanisms:
            raise MissingMechanism(f"node {n} has no mechanism")
        mech = mechanisms[n]
        if set(mech.parents) != set(g.parents(n)):
            raise ParentMismatch(
                f"mechanism of {n} uses parents {sorted(mech.parents)} but the graph gives {sorted(g.parents(n))}"
            )
        if isinstance(mech, BernoulliRoot) and not 0.0 <= mech.p <= 1.0:
            raise BadParameter(f"{n}: probability {mech.p} outside [0, 1]")
        if isinstance(mech, (LinearGaussian, Expression)) and not mech.noise_std >= 0.0:
            raise BadParameter(f"{n}: noise standard deviation {mech.noise_std} is negative")
        values = []
        if isinstance(mech, (BernoulliLogistic, LinearGaussian)):
            values = [mech.intercept, *mech.coefficients.values()]
        if isinstance(mech, (LinearGaussian, Expression)):
            values.append(mech.noise_std)
        if not all(np.isfinite(v) for v in values):
            raise BadParameter(f"{n}: parameters must be finite")
    return StructuralModel(g, {n: mechanisms[n] for n in g.nodes})


def intervene(m: StructuralModel, assignments: Mapping[str, float]) -> StructuralModel:
    """Replace each assigned node's mechanism by a point mass and cut its incoming links."""
    for n in assignments:
        if n not in m.graph.nodes:
            raise UnknownNode(n)
    g = m.graph.without_incoming(assignments)
    mechanisms = dict(m.mechanisms)
    for n, v in assignments.items():
        mechanisms[n] = Constant(float(v))
    return StructuralModel(g, mechanisms)


# ---------------------------------------------------------------- noise / RNG

def _uniform_block(seed: int, stream: int, start: int, n: int) -> np.ndarray:
    key = np.array([seed & MASK64, stream], dtype=np.uint64)
    counter = np.array([start // 4, 0, 0, 0], dtype=np.uint64)
    skip = start % 4
    raw = Philox(key=key, counter=counter).random_raw(skip + n)[skip:]
    # 53 random bits, shifted to the open interval (0, 1)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniforms(seed: int, stream: int, n: int, start: int = 0, workers: int = 1) -> np.ndarray:
    """Uniforms for records ``start .. start+n-1`` of stream ``(seed, stream)``."""
    if workers <= 1 or n < 2 * workers:
        return _uniform_block(seed, stream, start, n)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [(start + lo, hi - lo) for lo, hi in zip(bounds, bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda job: _uniform_block(seed, stream, *job), jobs)
        return np.concatenate(list(parts))


def draw_noise(m: StructuralModel, n: int, seed: int, workers: int = 1, start: int = 0) -> dict[str, np.ndarray]:
    """Prior noise for every stochastic node (uniforms for Bernoulli nodes)."""
    noise = {}
    for node in m.stochastic_nodes():
        u = uniforms(seed, m.stream_index(node), n, start, workers)
        mech = m.mechanisms[node]
        noise[node] = u if mech.binary else mech.noise_std * ndtri(u)
    return noise


def _linear_predictor(mech, env):
    total = mech.intercept
    for p, c in mech.coefficients.items():
        total = total + c * env[p]
    return total


def mechanism_mean(mech, env):
    """Noise-free part of a mechanism: probability for Bernoulli nodes, f(parents) otherwise."""
    if isinstance(mech, BernoulliRoot):
        return mech.p
    if isinstance(mech, BernoulliLogistic):
        return expit(_linear_predictor(mech, env))
    if isinstance(mech, LinearGaussian):
        return _linear_predictor(mech, env)
    if isinstance(mech, Expression):
        return formula.evaluate(mech.additive_part, env)
    return mech.value


def apply_mechanism(mech, env, noise):
    if isinstance(mech, Constant):
        return mech.value
    if mech.binary:
        return (noise < mechanism_mean(mech, env)).astype(float) if isinstance(noise, np.ndarray) \
            else float(noise < mechanism_mean(mech, env))
    if isinstance(mech, Expression) and not mech.additive:
        return formula.evaluate(mech.tree, {**env, formula.NOISE: noise})
    return mechanism_mean(mech, env) + noise


def evaluate(
    m: StructuralModel,
    noise: Mapping[str, Union[float, np.ndarray]],
    forced: Optional[Mapping[str, Union[float, np.ndarray]]] = None,
    edge_values: Optional[Mapping[tuple[str, str], float]] = None,
) -> dict[str, Union[float, np.ndarray]]:
    """Structural evaluation in topological order.

    ``forced`` pins node values; ``edge_values`` overrides what a child sees
    of one parent along a single link, which is how path-specific regimes
    (the value ``a`` on some links out of the sensitive node and ``a_bar`` on
    the others) are expressed without duplicating nodes.
    """
    forced = forced or {}
    edge_values = edge_values or {}
    values = {}
    for node in m.order:
        if node in forced:
            values[node] = forced[node]
            continue
        mech = m.mechanisms[node]
        env = {}
        for p in mech.parents:
            env[p] = edge_values.get((p, node), values[p])
        eps = None
        if mech.stochastic:
            if node not in noise:
                raise MissingNoise(f"no noise value for {node}")
            eps = noise[node]
        values[node] = apply_mechanism(mech, env, eps)
    return values


def eval_record(m: StructuralModel, noise: Mapping[str, float], forced: Optional[Mapping[str, float]] = None,
                edge_values=None) -> dict[str, float]:
    """Evaluate a single record from explicit noise values."""
    values = evaluate(m, noise, forced, edge_values)
    return {n: float(values[n]) for n in m.graph.nodes}


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    """Column-per-node table.  Rows are exposed as ``dict`` records."""

    columns: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise BadParameter("columns have different lengths")

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, i: int) -> dict[str, float]:
        return {k: float(v[i]) for k, v in self.columns.items()}

    def records(self):
        for i in range(len(self)):
            yield self[i]

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UnknownNode(name)
        return self.columns[name]


def sample(m: StructuralModel, n: int, seed: int, workers: int = 1) -> Dataset:
    """Ancestral sampling of ``n`` records."""
    if n < 1:
        raise BadParameter("sample size must be at least 1")
    noise = draw_noise(m, n, seed, workers)
    values = evaluate(m, noise)
    columns = {node: np.broadcast_to(np.asarray(values[node], dtype=float), (n,)).copy() for node in m.graph.nodes}
    return Dataset(columns, {"seed": seed, "model": fingerprint(m), "n": n})


# ---------------------------------------------------------------- exact moments

def _check_moment_family(m: StructuralModel):
    for node in m.order:
        mech = m.mechanisms[node]
        if mech.binary:
            for p in mech.parents:
                if not (m.mechanisms[p].binary or isinstance(m.mechanisms[p], Constant)):
                    raise UnsupportedMechanism(f"Bernoulli node {node} has a continuous parent {p}")
        elif not isinstance(mech, (LinearGaussian, Constant)):
            raise UnsupportedMechanism(f"node {node} is not linear-Gaussian ({mech.kind})")


def enumerate_bernoulli(m: StructuralModel, nodes=None) -> list[tuple[dict[str, float], float]]:
    """All 0/1 configurations of the Bernoulli nodes with their probabilities.

    ``nodes`` restricts the enumeration to a subset that must be closed under
    taking Bernoulli parents.  Constant parents contribute their fixed value.
    """
    binary = [n for n in m.order if m.mechanisms[n].binary and (nodes is None or n in nodes)]
    if len(binary) > MAX_BERNOULLI_CONFIGS:
        raise UnsupportedMechanism(f"{len(binary)} Bernoulli nodes exceed the enumeration limit")
    fixed = {n: m.mechanisms[n].value for n in m.order if isinstance(m.mechanisms[n], Constant)}
    out = []
    for bits in itertools.product((0.0, 1.0), repeat=len(binary)):
        config = dict(zip(binary, bits))
        env = {**fixed, **config}
        prob = 1.0
        for node in binary:
            mech = m.mechanisms[node]
            for p in mech.parents:
                if p not in env:
                    raise UnsupportedMechanism(f"parent {p} of {node} is outside the enumerated set")
            p1 = float(mechanism_mean(mech, env))
            prob *= p1 if config[node] == 1.0 else 1.0 - p1
        out.append((config, prob))
    return out


@dataclass(frozen=True)
class Moments:
    nodes: tuple[str, ...]
    mean: np.ndarray
    cov: np.ndarray
    probability: float = 1.0

    def index(self, node):
        return self.nodes.index(node)

    def mean_of(self, node) -> float:
        return float(self.mean[self.index(node)])

    def var(self, node) -> float:
        i = self.index(node)
        return float(self.cov[i, i])

    def covariance(self, u, v) -> float:
        return float(self.cov[self.index(u), self.index(v)])

    def sub_cov(self, rows, cols):
        return self.cov[np.ix_([self.index(r) for r in rows], [self.index(c) for c in cols])]

    def partial_covariance(self, u, v, given=()) -> float:
        given = list(given)
        if not given:
            return self.covariance(u, v)
        szz = self.sub_cov(given, given)
        return float(self.covariance(u, v) - self.sub_cov([u], given) @ np.linalg.pinv(szz) @ self.sub_cov(given, [v]))

    def partial_correlation(self, u, v, given=()) -> float:
        num = self.partial_covariance(u, v, given)
        du = self.partial_covariance(u, u, given)
        dv = self.partial_covariance(v, v, given)
        if du <= 0 or dv <= 0:
            return 0.0
        return num / np.sqrt(du * dv)


def _config_means(m: StructuralModel, config):
    idx = {n: i for i, n in enumerate(m.graph.nodes)}
    mu = np.zeros(len(idx))
    for node in m.order:
        mech = m.mechanisms[node]
        if node in config:
            mu[idx[node]] = config[node]
        elif isinstance(mech, Constant):
            mu[idx[node]] = mech.value
        else:
            mu[idx[node]] = _linear_predictor(mech, {p: mu[idx[p]] for p in mech.parents})
    return mu


def _within_covariance(m: StructuralModel):
    # sequential substitution keeps simple coefficients exact in floating point
    idx = {n: i for i, n in enumerate(m.graph.nodes)}
    k = len(idx)
    cov = np.zeros((k, k))
    done = []
    for node in m.order:
        mech = m.mechanisms[node]
        i = idx[node]
        if isinstance(mech, LinearGaussian):
            for j in done:
                cov[i, j] = cov[j, i] = sum(c * cov[idx[p], j] for p, c in mech.coefficients.items())
            cov[i, i] = sum(c * cov[idx[p], i] for p, c in mech.coefficients.items()) + mech.noise_std**2
        done.append(i)
    return cov


def _components(m: StructuralModel, condition=None):
    _check_moment_family(m)
    condition = dict(condition or {})
    for node, value in condition.items():
        if node not in m.graph.nodes:
            raise UnknownNode(node)
        mech = m.mechanisms[node]
        if not (mech.binary or isinstance(mech, Constant)):
            raise UnsupportedMechanism(f"can only condition on Bernoulli nodes, not {node}")
    comps = []
    for config, prob in enumerate_bernoulli(m):
        ok = True
        for node, value in condition.items():
            if isinstance(m.mechanisms[node], Constant):
                ok &= m.mechanisms[node].value == value
            else:
                ok &= config[node] == value
        if ok and prob > 0.0:
            comps.append((config, prob))
    total = sum(p for _, p in comps)
    if total < DEGENERATE_PROBABILITY:
        raise DegenerateConditioning(f"conditioning event {condition} has probability {total:.3g}")
    return comps, total


def population_moments(m: StructuralModel, condition: Optional[Mapping[str, float]] = None) -> Moments:
    """Exact mean and covariance, optionally given values of Bernoulli nodes.

    The model must be linear-Gaussian apart from Bernoulli nodes whose
    ancestors are Bernoulli as well; moments are mixed over every 0/1
    configuration of those nodes.
    """
    comps, total = _components(m, condition)
    within = _within_covariance(m)
    means = [(_config_means(m, config), prob / total) for config, prob in comps]
    mean = sum(w * mu for mu, w in means)
    cov = within.copy()
    for mu, w in means:
        d = mu - mean
        cov += w * np.outer(d, d)
    if len(means) == 1:
        mean = means[0][0]
    return Moments(m.graph.nodes, mean, cov, total)


def conditional_mean(m: StructuralModel, target: str, evidence: Mapping[str, Union[float, np.ndarray]]):
    """E[target | evidence] where evidence may include continuous nodes.

    Continuous evidence is handled by Gaussian conditioning inside every
    Bernoulli configuration, with configurations reweighted by the Gaussian
    density of the evidence.  Array-valued evidence is broadcast.
    """
    binary_ev = {k: v for k, v in evidence.items() if m.mechanisms[k].binary or isinstance(m.mechanisms[k], Constant)}
    cont_ev = {k: v for k, v in evidence.items() if k not in binary_ev}
    comps, _ = _components(m, binary_ev)
    idx = {n: i for i, n in enumerate(m.graph.nodes)}
    t = idx[target]
    if target in evidence:
        return evidence[target]
    if not cont_ev:
        means = [(_config_means(m, c)[t], p) for c, p in comps]
        total = sum(p for _, p in means)
        return sum(mu * p for mu, p in means) / total
    within = _within_covariance(m)
    e_nodes = sorted(cont_ev)
    e_idx = [idx[n] for n in e_nodes]
    see = within[np.ix_(e_idx, e_idx)]
    if np.linalg.matrix_rank(see) < len(e_idx):
        raise SingularSystem(f"evidence {e_nodes} has a singular covariance")
    see_inv = np.linalg.inv(see)
    gain = within[t, e_idx] @ see_inv
    values = np.broadcast_arrays(*[np.asarray(cont_ev[n], dtype=float) for n in e_nodes])
    e = np.stack(values, axis=-1)
    log_w, cmeans = [], []
    for config, prob in comps:
        mu = _config_means(m, config)
        d = e - mu[e_idx]
        log_w.append(np.log(prob) - 0.5 * np.einsum("...i,ij,...j->...", d, see_inv, d))
        cmeans.append(mu[t] + d @ gain)
    log_w = np.stack(log_w)
    w = np.exp(log_w - log_w.max(axis=0))
    w /= w.sum(axis=0)
    return (w * np.stack(cmeans)).sum(axis=0)


def least_squares_predictor(m: StructuralModel, target: str, inputs) -> dict[str, float]:
    """Coefficients of the population least-squares linear predictor (centered form)."""
    inputs = sorted(inputs)
    for n in [target, *inputs]:
        if n not in m.graph.nodes:
            raise UnknownNode(n)
    if not inputs:
        return {}
    mom = population_moments(m)
    sxx = mom.sub_cov(inputs, inputs)
    sxy = mom.sub_cov(inputs, [target])[:, 0]
    scale = max(np.abs(sxx).max(), 1e-300)
    if np.linalg.matrix_rank(sxx, tol=1e-12 * scale) < len(inputs):
        raise SingularSystem(f"inputs {inputs} are collinear")
    beta = np.linalg.solve(sxx, sxy)
    return {n: float(b) for n, b in zip(inputs, beta)}
