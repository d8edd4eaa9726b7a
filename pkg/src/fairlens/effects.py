"""Interventional and path-specific effects of the sensitive node on the outcome.

Every effect here is a difference of outcome means under *regimes*: an
assignment of a value of the sensitive node ``A`` to each of its outgoing
links.  ``A = a`` on every link is the intervention ``do(A=a)``; mixing ``a``
and ``a_bar`` across links gives direct, indirect and path-specific effects.

Closed-form estimates substitute the regime into the children's linear
predictors and read off exact means.  Monte-Carlo estimates draw each term of
a contrast from its own block of records of the seeded noise streams (term k
uses records ``k*n .. (k+1)*n - 1``), so the reported standard error reflects
the sampling error of both means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import (
    BackdoorViolated,
    DegenerateConditioning,
    EmptyStratum,
    NoDirectEdge,
    RolesUnset,
    UnsupportedMechanism,
    ValidationError,
)
from .graph import satisfies_backdoor
from .scm import (
    DEGENERATE_PROBABILITY,
    BernoulliLogistic,
    Constant,
    Dataset,
    LinearGaussian,
    StructuralModel,
    conditional_mean,
    draw_noise,
    enumerate_bernoulli,
    evaluate,
    mechanism_mean,
    population_moments,
)

CLOSED = "closed"
MC = "mc"
DEFAULT_MC_SAMPLES = 100_000


@dataclass(frozen=True)
class EffectEstimate:
    value: float
    method: str  # closed_form | monte_carlo | plug_in
    n_samples: Optional[int] = None
    std_error: Optional[float] = None
    seed: Optional[int] = None
    verified: bool = True

    def to_dict(self):
        out = {"value": self.value, "method": self.method}
        if self.method == "monte_carlo":
            out.update(n_samples=self.n_samples, std_error=self.std_error, seed=self.seed)
        elif self.n_samples is not None:
            out["n_samples"] = self.n_samples
        if not self.verified:
            out["verified"] = False
        return out


def _closed(value):
    return EffectEstimate(float(value), "closed_form")


def _mc(plus, minus, n, seed):
    plus, minus = np.asarray(plus, dtype=float), np.asarray(minus, dtype=float)
    var = (plus.var(ddof=1) + minus.var(ddof=1)) / n if n > 1 else 0.0
    return EffectEstimate(float(plus.mean() - minus.mean()), "monte_carlo", n, float(np.sqrt(var)), seed)


@dataclass(frozen=True)
class PathInterventionSpec:
    """``active`` on the links in ``active_edges``, ``baseline`` on the other links out of ``A``."""

    baseline: float
    active: float
    active_edges: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "active_edges", frozenset(tuple(e) for e in self.active_edges))

    def validate(self, m: StructuralModel):
        a = _sensitive(m)
        out_edges = {(a, c) for c in m.graph.children(a)}
        extra = self.active_edges - out_edges
        if extra:
            bad = ", ".join(f"{u}->{v}" for u, v in sorted(extra))
            raise ValidationError(f"active edges must leave {a}: {bad}")

    def edge_values(self, m: StructuralModel) -> dict:
        self.validate(m)
        a = _sensitive(m)
        return {(a, c): (self.active if (a, c) in self.active_edges else self.baseline) for c in m.graph.children(a)}


def _sensitive(m):
    if m.graph.sensitive is None:
        raise RolesUnset("the model has no sensitive node")
    return m.graph.sensitive


def _outcome(m):
    if m.graph.outcome is None:
        raise RolesUnset("the model has no outcome node")
    return m.graph.outcome


def uniform_regime(m: StructuralModel, value) -> dict:
    a = _sensitive(m)
    return {(a, c): value for c in m.graph.children(a)}


def _substitute(m: StructuralModel, edge_values: Mapping) -> StructuralModel:
    """Fold per-link values of ``A`` into the children's intercepts."""
    a = _sensitive(m)
    mechanisms = dict(m.mechanisms)
    for (parent, child), value in edge_values.items():
        mech = mechanisms[child]
        if not isinstance(mech, (LinearGaussian, BernoulliLogistic)):
            raise UnsupportedMechanism(f"closed form needs a linear predictor at {child}, found {mech.kind}")
        coefs = dict(mech.coefficients)
        intercept = mech.intercept + coefs.pop(parent) * value
        if isinstance(mech, LinearGaussian):
            mechanisms[child] = LinearGaussian(intercept, coefs, mech.noise_std)
        else:
            mechanisms[child] = BernoulliLogistic(intercept, coefs)
    mechanisms[a] = Constant(0.0)
    g = m.graph.without_incoming([a]).without_outgoing(a)
    return StructuralModel(g, mechanisms)


def regime_mean(m: StructuralModel, edge_values: Mapping, target: Optional[str] = None) -> float:
    """Exact mean of ``target`` under a per-link regime."""
    target = target or _outcome(m)
    return population_moments(_substitute(m, edge_values)).mean_of(target)


def regime_samples(m, regimes, target=None, n=DEFAULT_MC_SAMPLES, seed=0, workers=1):
    """``n`` outcome draws per regime; regime k reads record block k."""
    target = target or _outcome(m)
    a = _sensitive(m)
    out = []
    for k, ev in enumerate(regimes):
        noise = draw_noise(m, n, seed, workers, start=k * n)
        values = evaluate(m, noise, forced={a: 0.0}, edge_values=ev)
        out.append(np.broadcast_to(np.asarray(values[target], dtype=float), (n,)))
    return out


def _contrast(m, plus, minus, method, n, seed, workers):
    if method == CLOSED:
        return _closed(regime_mean(m, plus) - regime_mean(m, minus))
    if method != MC:
        raise ValidationError(f"unknown method {method!r}")
    yp, ym = regime_samples(m, [plus, minus], n=n, seed=seed, workers=workers)
    return _mc(yp, ym, n, seed)


def ate(m: StructuralModel, a, a_bar, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0, workers=1) -> EffectEstimate:
    """<Y_a> - <Y_a_bar>."""
    return _contrast(m, uniform_regime(m, a), uniform_regime(m, a_bar), method, n, seed, workers)


def pse(m: StructuralModel, spec: PathInterventionSpec, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0,
        workers=1) -> EffectEstimate:
    """Effect along the paths whose first link is in ``spec.active_edges``."""
    return _contrast(m, spec.edge_values(m), uniform_regime(m, spec.baseline), method, n, seed, workers)


def _direct_split(m, direct_value, indirect_value):
    a, y = _sensitive(m), _outcome(m)
    if (a, y) not in m.graph.edges:
        raise NoDirectEdge(f"no direct link {a}->{y}")
    regime = uniform_regime(m, indirect_value)
    regime[(a, y)] = direct_value
    return regime


def ade(m: StructuralModel, a, a_bar, active_variant=False, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0,
        workers=1) -> EffectEstimate:
    """ADE_{a_bar a} = <Y_a(M_a_bar)> - <Y_a_bar>.

    With ``active_variant`` the alternative <Y_a> - <Y_a_bar(M_a)> is returned.
    """
    if active_variant:
        return _contrast(m, uniform_regime(m, a), _direct_split(m, a_bar, a), method, n, seed, workers)
    return _contrast(m, _direct_split(m, a, a_bar), uniform_regime(m, a_bar), method, n, seed, workers)


BASELINE_DIRECT = "baseline_direct"
ACTIVE_DIRECT = "active_direct"


def aie(m: StructuralModel, a, a_bar, variant=BASELINE_DIRECT, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0,
        workers=1) -> EffectEstimate:
    """Indirect effect with the direct link held at ``a_bar`` (baseline_direct) or at ``a``."""
    if variant == BASELINE_DIRECT:
        return _contrast(m, _direct_split(m, a_bar, a), uniform_regime(m, a_bar), method, n, seed, workers)
    if variant == ACTIVE_DIRECT:
        return _contrast(m, uniform_regime(m, a), _direct_split(m, a, a_bar), method, n, seed, workers)
    raise ValidationError(f"unknown AIE variant {variant!r}")


# ------------------------------------------------------------ ETT / NCI

def _require_binary_sensitive(m):
    a = _sensitive(m)
    if not m.mechanisms[a].binary:
        raise ValidationError(f"sensitive node {a} must be Bernoulli")
    return a


def _phi_closed(m: StructuralModel, world, cond) -> float:
    """E[Y_world | A = cond] by enumerating the Bernoulli non-descendants of A."""
    a, y = _require_binary_sensitive(m), _outcome(m)
    desc = m.graph.descendants(a)
    shared = [n for n in m.order if m.mechanisms[n].binary and n not in desc]
    weights = {}
    for config, prob in enumerate_bernoulli(m, set(shared)):
        if config[a] != cond or prob <= 0.0:
            continue
        key = tuple((k, v) for k, v in config.items() if k != a)
        weights[key] = weights.get(key, 0.0) + prob
    total = sum(weights.values())
    if total < DEGENERATE_PROBABILITY:
        raise DegenerateConditioning(f"p({a}={cond}) = {total:.3g}")
    world_model = _substitute(m, uniform_regime(m, world))
    acc = 0.0
    for key, w in weights.items():
        acc += w * population_moments(world_model, dict(key)).mean_of(y)
    return acc / total


def _factual_weights(m, noise, cond):
    a = _sensitive(m)
    factual = evaluate(m, noise)
    mech = m.mechanisms[a]
    p1 = np.broadcast_to(np.asarray(mechanism_mean(mech, {p: factual[p] for p in mech.parents}), float),
                         np.shape(noise[a]))
    w = p1 if cond == 1 else 1.0 - p1
    total = w.sum()
    if total / len(w) < DEGENERATE_PROBABILITY:
        raise DegenerateConditioning(f"p({a}={cond}) is numerically zero")
    return w / total


def _world_outcome(m, noise, world, n):
    a, y = _sensitive(m), _outcome(m)
    values = evaluate(m, noise, forced={a: 0.0}, edge_values=uniform_regime(m, world))
    return np.broadcast_to(np.asarray(values[y], dtype=float), (n,))


def _weighted_mean(x, w):
    mean = float(w @ x)
    d = w * (x - mean)
    return mean, float(d @ d)


def _weighted_contrast(first, second, n, seed):
    (m1, v1), (m2, v2) = first, second
    return EffectEstimate(m1 - m2, "monte_carlo", n, float(np.sqrt(v1 + v2)), seed)


def _phi_mc(m, world, cond, n, seed, workers, block):
    """Self-normalised estimate of E[Y_world | A = cond] on record block ``block``."""
    noise = draw_noise(m, n, seed, workers, start=block * n)
    return _weighted_mean(_world_outcome(m, noise, world, n), _factual_weights(m, noise, cond))


def ett(m: StructuralModel, a, a_bar, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0, workers=1) -> EffectEstimate:
    """ETT_{a_bar a} = <Y_a | A=a_bar> - <Y | A=a_bar>."""
    _require_binary_sensitive(m)
    _outcome(m)
    if method == CLOSED:
        return _closed(_phi_closed(m, a, a_bar) - _phi_closed(m, a_bar, a_bar))
    return _weighted_contrast(_phi_mc(m, a, a_bar, n, seed, workers, 0),
                              _phi_mc(m, a_bar, a_bar, n, seed, workers, 1), n, seed)


def nci(m: StructuralModel, a, a_bar, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0, workers=1) -> EffectEstimate:
    """NCI_{a_bar a} = <Y_a_bar | A=a> - <Y | A=a_bar>."""
    _require_binary_sensitive(m)
    _outcome(m)
    if method == CLOSED:
        return _closed(_phi_closed(m, a_bar, a) - _phi_closed(m, a_bar, a_bar))
    return _weighted_contrast(_phi_mc(m, a_bar, a, n, seed, workers, 0),
                              _phi_mc(m, a_bar, a_bar, n, seed, workers, 1), n, seed)


def observed_gap(m: StructuralModel, a, a_bar, method=CLOSED, n=DEFAULT_MC_SAMPLES, seed=0,
                 workers=1) -> EffectEstimate:
    """<Y | A=a> - <Y | A=a_bar>, the association an observer would see."""
    _require_binary_sensitive(m)
    _outcome(m)
    if method == CLOSED:
        return _closed(_phi_closed(m, a, a) - _phi_closed(m, a_bar, a_bar))
    return _weighted_contrast(_phi_mc(m, a, a, n, seed, workers, 0),
                              _phi_mc(m, a_bar, a_bar, n, seed, workers, 1), n, seed)


# ------------------------------------------------------------ back-door adjustment

def _adjust_model(m: StructuralModel, a, y, a_value, adjustment, method, n, seed, workers, start=0):
    binary = [c for c in adjustment if m.mechanisms[c].binary]
    continuous = [c for c in adjustment if c not in binary]
    if method == MC or continuous:
        free = [b for b in m.order if m.mechanisms[b].binary and b not in adjustment and b != a]
        if method == CLOSED and not free:
            # a single Gaussian component per stratum: the adjusted mean is affine in
            # the continuous covariates, so plugging in their stratum means is exact
            acc = 0.0
            for config, prob in _marginal_configs(m, binary):
                if prob <= 0.0:
                    continue
                cmeans = population_moments(m, config)
                ev = {a: a_value, **config, **{c: cmeans.mean_of(c) for c in continuous}}
                acc += prob * float(conditional_mean(m, y, ev))
            return EffectEstimate(acc, "closed_form")
        values = evaluate(m, draw_noise(m, n, seed, workers, start=start))
        data = Dataset({k: np.broadcast_to(np.asarray(v, dtype=float), (n,)) for k, v in values.items()})
        est = np.empty(n)
        strata = _strata(data, binary)
        for config, rows in strata:
            ev = {a: a_value, **config, **{c: data.column(c)[rows] for c in continuous}}
            est[rows] = conditional_mean(m, y, ev)
        se = float(est.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return EffectEstimate(float(est.mean()), "monte_carlo", n, se, seed)
    acc = 0.0
    for config, prob in _marginal_configs(m, binary):
        if prob <= 0.0:
            continue
        acc += prob * float(conditional_mean(m, y, {a: a_value, **config}))
    return EffectEstimate(acc, "closed_form")


def _marginal_configs(m, nodes):
    nodes = sorted(nodes)
    out = {}
    for config, prob in enumerate_bernoulli(m):
        key = tuple(config[c] for c in nodes)
        out[key] = out.get(key, 0.0) + prob
    return [(dict(zip(nodes, key)), p) for key, p in sorted(out.items())]


def _strata(data: Dataset, columns):
    if not columns:
        return [({}, np.arange(len(data)))]
    table = np.column_stack([data.column(c) for c in columns])
    keys, inverse = np.unique(table, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    return [(dict(zip(columns, map(float, key))), np.flatnonzero(inverse == i)) for i, key in enumerate(keys)]


def backdoor_adjust(
    source: Union[StructuralModel, Dataset],
    a_value,
    adjustment: Iterable[str],
    graph=None,
    check: bool = True,
    method: str = CLOSED,
    n: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    workers: int = 1,
    start: int = 0,
) -> EffectEstimate:
    """Mean outcome under ``do(A=a_value)`` via the back-door adjustment formula.

    ``graph`` supplies roles and structure for dataset sources.  With
    ``check=False`` the criterion is not enforced and the estimate is marked
    unverified.  Monte-Carlo draws use records ``start .. start+n-1``.
    """
    adjustment = sorted(set(adjustment))
    if isinstance(source, StructuralModel):
        graph = source.graph
    if graph is None:
        raise ValidationError("a dataset source needs the causal graph")
    if graph.sensitive is None or graph.outcome is None:
        raise RolesUnset("sensitive and outcome nodes must both be set")
    a, y = graph.sensitive, graph.outcome
    verified = True
    if check:
        if not satisfies_backdoor(graph, adjustment, a, y):
            raise BackdoorViolated(f"{{{', '.join(adjustment)}}} does not satisfy the back-door criterion")
    else:
        verified = satisfies_backdoor(graph, adjustment, a, y)
    if isinstance(source, StructuralModel):
        est = _adjust_model(source, a, y, a_value, adjustment, method, n, seed, workers, start)
    else:
        est = _adjust_data(source, a, y, a_value, adjustment)
    if not verified:
        est = EffectEstimate(est.value, est.method, est.n_samples, est.std_error, est.seed, verified=False)
    return est


def _adjust_data(data: Dataset, a, y, a_value, adjustment):
    treat = data.column(a) == a_value
    outcome = data.column(y)
    total = len(data)
    acc = 0.0
    for config, rows in _strata(data, adjustment):
        hit = rows[treat[rows]]
        if hit.size == 0:
            raise EmptyStratum(f"no records with {a}={a_value} in stratum {config}")
        acc += rows.size / total * outcome[hit].mean()
    return EffectEstimate(float(acc), "plug_in", n_samples=total)


def backdoor_effect(source, a, a_bar, adjustment, **kwargs) -> EffectEstimate:
    """Adjusted contrast E[Y | do(A=a)] - E[Y | do(A=a_bar)]."""
    hi = backdoor_adjust(source, a, adjustment, **kwargs)
    lo = backdoor_adjust(source, a_bar, adjustment, start=kwargs.get("n", DEFAULT_MC_SAMPLES), **kwargs)
    se = None
    if hi.std_error is not None:
        se = float(np.hypot(hi.std_error, lo.std_error))
    return EffectEstimate(hi.value - lo.value, hi.method, hi.n_samples, se, hi.seed, hi.verified)
