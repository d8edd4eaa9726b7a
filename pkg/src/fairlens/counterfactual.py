"""Counterfactual inference on a twin network.

The twin network duplicates every descendant of the sensitive node ``A``.
The factual copy sees the observed value of ``A``; the counterfactual copy
sees, link by link, the value a :class:`PathInterventionSpec` assigns.  Both
copies consume the same noise, and non-descendants of ``A`` are shared.

Answering a query is the usual three steps: abduct the noise from an
observed record, push the posterior through the counterfactual copy, and
summarise the resulting outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.stats import norm

from .effects import PathInterventionSpec
from .errors import (
    BadParameter,
    InconsistentRecord,
    LabelUnknown,
    NotDescendant,
    RolesUnset,
    UnknownNode,
    UnsupportedMechanism,
    UnsupportedRegime,
)
from .graph import CAUSAL, FAIR, UNFAIR, UNKNOWN, enumerate_paths, path_kind
from .scm import (
    Constant,
    Dataset,
    LinearGaussian,
    StructuralModel,
    apply_mechanism,
    draw_noise,
    evaluate,
    fingerprint,
    mechanism_mean,
)

ABDUCTION_TOLERANCE = 1e-9
DEFAULT_CF_SAMPLES = 1000
EXACT = "exact_delta"
SAMPLED = "sampled"


def _sensitive(m):
    if m.graph.sensitive is None:
        raise RolesUnset("the model has no sensitive node")
    return m.graph.sensitive


def _outcome(m):
    if m.graph.outcome is None:
        raise RolesUnset("the model has no outcome node")
    return m.graph.outcome


# ---------------------------------------------------------------- twin network

@dataclass(frozen=True)
class TwinModel:
    """Factual model plus counterfactual copies of the descendants of ``A``.

    ``duplicated`` maps each factual node to the name of its copy, written as
    a potential outcome: ``D -> D_a``, ``Y -> Y_ā(D_a)``.
    """

    base: StructuralModel
    spec: PathInterventionSpec
    duplicated: Mapping[str, str]

    @property
    def shared(self) -> tuple[str, ...]:
        return tuple(n for n in self.base.nodes if n not in self.duplicated)

    @property
    def shared_noise(self) -> tuple[str, ...]:
        """Noise variables feeding both copies of a duplicated node."""
        return tuple(n for n in self.base.stochastic_nodes() if n in self.duplicated)

    def counterfactual(self, noise, factual_a):
        """Values of every node on the counterfactual side, keyed by factual name."""
        a = _sensitive(self.base)
        return evaluate(self.base, noise, forced={a: factual_a}, edge_values=self.spec.edge_values(self.base))

    def sample(self, n: int, seed: int, workers: int = 1) -> Dataset:
        """Joint draws of both sides; copies are stored under their potential-outcome names."""
        noise = draw_noise(self.base, n, seed, workers)
        factual = evaluate(self.base, noise)
        cf = self.counterfactual(noise, factual[_sensitive(self.base)])
        columns = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy() for k, v in factual.items()}
        for node, copy in self.duplicated.items():
            columns[copy] = np.broadcast_to(np.asarray(cf[node], dtype=float), (n,)).copy()
        return Dataset(columns, {"seed": seed, "model": fingerprint(self.base), "n": n, "twin": True})


def build_twin(m: StructuralModel, spec: PathInterventionSpec) -> TwinModel:
    a = _sensitive(m)
    spec.validate(m)
    desc = m.graph.descendants(a)
    names = {}
    for node in m.order:
        if node not in desc:
            continue
        subscript = ""
        if a in m.graph.parents(node):
            subscript = "a" if (a, node) in spec.active_edges else "ā"
        inner = [names[p] for p in m.graph.parents(node) if p in names]
        label = node + (f"_{subscript}" if subscript else "")
        if inner:
            label += "(" + ",".join(inner) + ")"
        names[node] = label
    return TwinModel(m, spec, names)


# ---------------------------------------------------------------- abduction

@dataclass
class NoisePosterior:
    """Posterior over the noise of a single record.

    ``exact_delta``: ``deltas`` pins the noise of every determined node and
    the nodes in ``free`` keep their prior (nothing observed depends on them).
    ``sampled``: ``samples`` holds weighted noise draws and ``values`` the
    matching node values.
    """

    kind: str
    observed: dict
    deltas: dict = field(default_factory=dict)
    free: tuple = ()
    samples: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    weights: Optional[np.ndarray] = None
    n_samples: int = 0
    seed: int = 0

    @property
    def exact(self) -> bool:
        return self.kind == EXACT

    def mean(self, node: str) -> float:
        if self.exact:
            raise BadParameter("posterior means are only stored for sampled posteriors")
        return float(self.weights @ np.broadcast_to(self.values[node], self.weights.shape))

    def std_error(self, node: str) -> float:
        x = np.broadcast_to(self.values[node], self.weights.shape)
        d = self.weights * (x - self.mean(node))
        return float(np.sqrt(d @ d))

    def effective_sample_size(self) -> float:
        if self.exact:
            return float("inf")
        return float(1.0 / (self.weights @ self.weights))


def _clean_record(m, record, include_outcome):
    a = _sensitive(m)
    rec = {}
    for k, v in record.items():
        if k not in m.graph.nodes:
            raise UnknownNode(k)
        if v is None or (isinstance(v, float) and np.isnan(v)):
            continue
        rec[k] = float(v)
    if not include_outcome and m.graph.outcome is not None:
        rec.pop(m.graph.outcome, None)
    if a not in rec:
        raise BadParameter(f"the record must include the sensitive node {a}")
    for n, v in rec.items():
        if m.mechanisms[n].binary and v not in (0.0, 1.0):
            raise InconsistentRecord(f"{n} is Bernoulli but the record holds {v}")
    return rec


def _binary_midpoint(p, x):
    if (x == 1.0 and p <= 0.0) or (x == 0.0 and p >= 1.0):
        return None
    return p / 2.0 if x == 1.0 else (1.0 + p) / 2.0


def _exact_abduction(m, rec):
    """Deltas and free nodes when the posterior is a point mass, else ``None``."""
    a = _sensitive(m)
    desc = m.graph.descendants(a)
    observed_anc = set()
    for n in rec:
        observed_anc |= m.graph.ancestors(n)
    deltas, free = {}, []
    for node in m.order:
        mech = m.mechanisms[node]
        if node not in rec:
            if node in observed_anc:
                return None
            if mech.stochastic:
                free.append(node)
            continue
        if not all(p in rec for p in mech.parents):
            return None
        x = rec[node]
        env = {p: rec[p] for p in mech.parents}
        if isinstance(mech, Constant):
            if abs(x - mech.value) > ABDUCTION_TOLERANCE:
                raise InconsistentRecord(f"{node} is fixed at {mech.value} but the record holds {x}")
            continue
        if mech.binary:
            if node in desc:
                return None
            u = _binary_midpoint(float(mechanism_mean(mech, env)), x)
            if u is None:
                raise InconsistentRecord(f"{node}={x:g} has probability zero given its parents")
            deltas[node] = u
            continue
        if not mech.additive:
            raise UnsupportedMechanism(f"cannot abduct the noise of {node}: its noise is not additive")
        r = x - float(mechanism_mean(mech, env))
        if mech.noise_std == 0.0 and abs(r) > ABDUCTION_TOLERANCE:
            raise InconsistentRecord(f"{node} has no noise but the record misses it by {r:.3g}")
        deltas[node] = r
    return deltas, tuple(free)


def _sampled_abduction(m, rec, n, seed):
    noise = draw_noise(m, n, seed)
    values, logw = {}, np.zeros(n)
    for node in m.order:
        mech = m.mechanisms[node]
        env = {p: values[p] for p in mech.parents}
        if node not in rec:
            values[node] = np.broadcast_to(np.asarray(apply_mechanism(mech, env, noise.get(node)), float), (n,))
            continue
        x = rec[node]
        if isinstance(mech, Constant):
            if abs(x - mech.value) > ABDUCTION_TOLERANCE:
                raise InconsistentRecord(f"{node} is fixed at {mech.value} but the record holds {x}")
        elif mech.binary:
            p = np.broadcast_to(np.asarray(mechanism_mean(mech, env), float), (n,))
            prob = p if x == 1.0 else 1.0 - p
            with np.errstate(divide="ignore"):
                logw += np.log(prob)
            u = noise[node]
            noise[node] = u * p if x == 1.0 else p + u * (1.0 - p)
        elif mech.additive:
            r = x - np.broadcast_to(np.asarray(mechanism_mean(mech, env), float), (n,))
            if mech.noise_std == 0.0:
                logw += np.where(np.abs(r) <= ABDUCTION_TOLERANCE, 0.0, -np.inf)
            else:
                logw += norm.logpdf(r, scale=mech.noise_std)
            noise[node] = r
        else:
            raise UnsupportedMechanism(f"cannot abduct the noise of {node}: its noise is not additive")
        values[node] = np.full(n, x)
    top = logw.max()
    if not np.isfinite(top):
        raise InconsistentRecord("no prior draw is consistent with the record")
    w = np.exp(logw - top)
    return noise, values, w / w.sum()


def abduct(
    m: StructuralModel,
    record: Mapping[str, float],
    n_samples: int = DEFAULT_CF_SAMPLES,
    seed: int = 0,
    include_outcome: bool = True,
) -> NoisePosterior:
    """Posterior over the noise given the observed entries of ``record``.

    Missing entries (absent keys, ``None`` or NaN) are unobserved.  A fully
    observed additive record gives point masses; otherwise prior draws are
    weighted by the likelihood of the observed values.
    """
    rec = _clean_record(m, record, include_outcome)
    exact = _exact_abduction(m, rec)
    if exact is not None:
        deltas, free = exact
        return NoisePosterior(EXACT, rec, deltas=deltas, free=free, n_samples=n_samples, seed=seed)
    if n_samples < 1:
        raise BadParameter("n_samples must be positive")
    noise, values, w = _sampled_abduction(m, rec, n_samples, seed)
    return NoisePosterior(SAMPLED, rec, samples=noise, values=values, weights=w, n_samples=n_samples, seed=seed)


# ---------------------------------------------------------------- counterfactual queries

@dataclass(frozen=True)
class CounterfactualResult:
    target: str
    value: float
    exact: bool
    std_error: Optional[float] = None
    n_samples: Optional[int] = None
    seed: Optional[int] = None
    samples: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def to_dict(self):
        out = {"target": self.target, "value": self.value, "method": "exact" if self.exact else "monte_carlo"}
        if not self.exact:
            out.update(n_samples=self.n_samples, std_error=self.std_error, seed=self.seed)
        return out


def _linear_closure(m, free, target):
    """True when zero noise at ``free`` nodes gives the exact mean of ``target``."""
    reach = m.graph.ancestors(target) | {target}
    for f in free:
        mech = m.mechanisms[f]
        if mech.binary or not mech.additive:
            return False
        for d in m.graph.descendants(f) & reach:
            if not isinstance(m.mechanisms[d], (LinearGaussian, Constant)):
                return False
    return True


def counterfactual_outcome(
    m: StructuralModel,
    record: Mapping[str, float],
    spec: PathInterventionSpec,
    target: Optional[str] = None,
    n_samples: int = DEFAULT_CF_SAMPLES,
    seed: int = 0,
    include_outcome: bool = True,
    method: str = "auto",
    posterior: Optional[NoisePosterior] = None,
) -> CounterfactualResult:
    """Mean of ``target`` on the counterfactual side of the twin network.

    ``method="mc"`` always pushes noise draws through the twin, even when a
    point value is available.
    """
    target = target or _outcome(m)
    if target not in m.graph.nodes:
        raise UnknownNode(target)
    twin = build_twin(m, spec)
    post = posterior or abduct(m, record, n_samples, seed, include_outcome)
    a_fact = post.observed[_sensitive(m)]
    if post.exact:
        reach = m.graph.ancestors(target) | {target}
        relevant = [f for f in post.free if f in reach]
        if method != "mc" and (not relevant or _linear_closure(m, relevant, target)):
            noise = dict(post.deltas)
            noise.update({f: 0.0 for f in post.free})
            value = float(twin.counterfactual(noise, a_fact)[target])
            return CounterfactualResult(target, value, True)
        prior = draw_noise(m, n_samples, seed)
        noise = {f: prior[f] for f in post.free}
        noise.update({k: np.full(n_samples, v) for k, v in post.deltas.items()})
        x = np.broadcast_to(np.asarray(twin.counterfactual(noise, a_fact)[target], float), (n_samples,))
        se = float(x.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
        return CounterfactualResult(target, float(x.mean()), False, se, n_samples, seed, x.copy())
    x = np.broadcast_to(np.asarray(twin.counterfactual(post.samples, a_fact)[target], float), (post.n_samples,))
    mean = float(post.weights @ x)
    d = post.weights * (x - mean)
    return CounterfactualResult(target, mean, False, float(np.sqrt(d @ d)), post.n_samples, seed, x.copy())


def _default_baseline(m, a_value, baseline):
    if baseline is not None:
        return float(baseline)
    a = _sensitive(m)
    if not m.mechanisms[a].binary:
        raise BadParameter(f"{a} is not binary; pass the baseline value explicitly")
    return 1.0 - a_value


def unfair_edges_from_labels(m: StructuralModel, target: Optional[str] = None) -> frozenset:
    """Unfair links on causal paths from ``A`` to ``target``; unlabelled ones are an error."""
    a, target = _sensitive(m), target or _outcome(m)
    out = set()
    for p in enumerate_paths(m.graph, a, target):
        if path_kind(p) != CAUSAL:
            continue
        for u, v in p.edges():
            lab = m.graph.label(u, v)
            if lab == UNKNOWN:
                raise LabelUnknown(f"link {u}->{v} on a causal path from {a} to {target} has no fairness label")
            if lab == UNFAIR:
                out.add((u, v))
    return frozenset(out)


def fair_regime(
    m: StructuralModel,
    a_value: float,
    baseline: float,
    unfair_edge_set=None,
    target: Optional[str] = None,
) -> PathInterventionSpec:
    """Regime keeping ``a_value`` on links out of ``A`` whose paths to ``target`` are fair.

    Links whose causal paths to ``target`` are all unfair get ``baseline``.
    A link feeding both fair and unfair paths cannot be expressed per link.
    """
    a, target = _sensitive(m), target or _outcome(m)
    unfair = frozenset(tuple(e) for e in unfair_edge_set) if unfair_edge_set is not None \
        else unfair_edges_from_labels(m, target)
    for e in unfair:
        if e not in m.graph.edges:
            raise UnknownNode(f"{e[0]}->{e[1]}")
    kinds = {}
    for p in enumerate_paths(m.graph, a, target):
        if path_kind(p) != CAUSAL:
            continue
        first = p.edges()[0]
        kinds.setdefault(first, set()).add(UNFAIR if any(e in unfair for e in p.edges()) else FAIR)
    active = []
    for c in m.graph.children(a):
        k = kinds.get((a, c), {FAIR})
        if len(k) > 1:
            raise UnsupportedRegime(f"link {a}->{c} starts both fair and unfair paths to {target}")
        if k == {FAIR}:
            active.append((a, c))
    return PathInterventionSpec(baseline=baseline, active=a_value, active_edges=frozenset(active))


def corrected_descendant(
    m: StructuralModel,
    record: Mapping[str, float],
    node: str,
    spec: Optional[PathInterventionSpec] = None,
    n_samples: int = DEFAULT_CF_SAMPLES,
    seed: int = 0,
    baseline: Optional[float] = None,
    include_outcome: bool = False,
    method: str = "auto",
) -> CounterfactualResult:
    """Counterfactual version of a descendant of ``A`` with its unfair influence removed.

    Without ``spec`` the regime follows the link labels towards ``node``.
    Linear chains give a point value; otherwise ``samples`` holds one
    counterfactual draw per abducted noise sample.
    """
    a = _sensitive(m)
    if node not in m.graph.nodes:
        raise UnknownNode(node)
    if node not in m.graph.descendants(a):
        raise NotDescendant(f"{node} is not a descendant of {a}")
    if a not in record:
        raise BadParameter(f"the record must include the sensitive node {a}")
    if spec is None:
        a_value = float(record[a])
        spec = fair_regime(m, a_value, _default_baseline(m, a_value, baseline), target=node)
    chain = (m.graph.ancestors(node) | {node}) & m.graph.descendants(a)
    linear = all(isinstance(m.mechanisms[n], (LinearGaussian, Constant)) for n in chain)
    return counterfactual_outcome(m, record, spec, node, n_samples, seed, include_outcome,
                                  method="auto" if linear and method != "mc" else "mc")


def fair_predict(
    m: StructuralModel,
    record: Mapping[str, float],
    unfair_edge_set=None,
    n_samples: int = DEFAULT_CF_SAMPLES,
    seed: int = 0,
    baseline: Optional[float] = None,
    include_outcome: bool = False,
) -> float:
    """Path-specific counterfactually fair prediction of the outcome.

    The outcome is predicted in the world where links out of ``A`` whose
    paths are unfair carry ``baseline`` (``1 - a`` for a binary ``A``) and
    fair links carry the observed ``a``; descendants reached through unfair
    paths are therefore replaced by their corrected versions.
    """
    return fair_prediction(m, record, unfair_edge_set, n_samples, seed, baseline, include_outcome).value


def fair_prediction(m, record, unfair_edge_set=None, n_samples=DEFAULT_CF_SAMPLES, seed=0, baseline=None,
                    include_outcome=False) -> CounterfactualResult:
    """:func:`fair_predict` with the full result (standard error, method)."""
    a = _sensitive(m)
    _outcome(m)
    if a not in record:
        raise BadParameter(f"the record must include the sensitive node {a}")
    a_value = float(record[a])
    spec = fair_regime(m, a_value, _default_baseline(m, a_value, baseline), unfair_edge_set)
    return counterfactual_outcome(m, record, spec, None, n_samples, seed, include_outcome)
