"""JSON report over one scenario (and optionally a dataset).

The report is a pure function of the inputs, the seed and the Monte-Carlo
settings.  It holds no timestamps, paths or worker counts, so two runs with
the same inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from typing import Optional

import numpy as np

from . import __version__
from . import counterfactual as cf
from . import effects as fx
from . import metrics as mt
from .dsl import ScenarioSpec
from .errors import FairlensError, UnsupportedMechanism
from .graph import audit_paths, minimal_adjustment_sets, recommend_criteria
from .scm import Dataset, sample

SCHEMA = 1
DEFAULT_REPORT_RECORDS = 5
CURVE_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _skipped(reason):
    return {"status": "skipped", "reason": reason}


def _error(exc: FairlensError):
    return {"status": "not_applicable", "error": type(exc).__name__, "reason": str(exc)}


def _estimate(fn, *args, n, seed, workers, **kwargs):
    """Closed form when the model allows it, Monte Carlo otherwise."""
    try:
        try:
            return fn(*args, method=fx.CLOSED, **kwargs).to_dict()
        except UnsupportedMechanism:
            return fn(*args, method=fx.MC, n=n, seed=seed, workers=workers, **kwargs).to_dict()
    except FairlensError as exc:
        return _error(exc)


def _effects_section(spec: ScenarioSpec, seed, workers, n):
    m = spec.model
    if m is None:
        return _skipped("scenario has no mechanisms")
    if m.graph.sensitive is None or m.graph.outcome is None:
        return _skipped("sensitive and outcome nodes must both be set")
    a, a_bar = 1.0, 0.0
    kw = dict(n=n, seed=seed, workers=workers)
    out = {
        "contrast": {"a": a, "a_bar": a_bar},
        "ate": _estimate(fx.ate, m, a, a_bar, **kw),
        "ade": _estimate(fx.ade, m, a, a_bar, **kw),
        "aie": _estimate(fx.aie, m, a, a_bar, **kw),
        "ett": _estimate(fx.ett, m, a, a_bar, **kw),
        "nci": _estimate(fx.nci, m, a, a_bar, **kw),
        "observed_gap": _estimate(fx.observed_gap, m, a, a_bar, **kw),
    }
    try:
        sets = minimal_adjustment_sets(m.graph, m.graph.sensitive, m.graph.outcome)
    except FairlensError as exc:
        sets = []
        out["backdoor"] = _error(exc)
    if sets:
        adjust = sorted(sets[0])
        entry = _estimate(fx.backdoor_effect, m, a, a_bar, adjust, **kw)
        entry["adjustment"] = adjust
        out["backdoor"] = entry
    elif "backdoor" not in out:
        out["backdoor"] = _skipped("no adjustment set satisfies the back-door criterion")
    pse = {}
    for child in m.graph.children(m.graph.sensitive):
        edge = (m.graph.sensitive, child)
        spec_ = fx.PathInterventionSpec(a_bar, a, {edge})
        pse[f"{edge[0]}->{edge[1]}"] = _estimate(fx.pse, m, spec_, **kw)
    out["pse_single_link"] = pse
    return out


def _record_entry(m, record, seed, n):
    a = m.graph.sensitive
    entry = {"record": record}
    if not m.mechanisms[a].binary:
        entry["status"] = "skipped"
        entry["reason"] = f"{a} is not binary"
        return entry
    a_bar = 1.0 - record[a]
    try:
        flip = cf.counterfactual_outcome(m, record, fx.PathInterventionSpec(a_bar, record[a]), n_samples=n,
                                         seed=seed)
        entry["flip_all_links"] = flip.to_dict()
    except FairlensError as exc:
        entry["flip_all_links"] = _error(exc)
    try:
        entry["fair_prediction"] = cf.fair_prediction(m, record, n_samples=n, seed=seed).to_dict()
    except FairlensError as exc:
        entry["fair_prediction"] = _error(exc)
    return entry


def _counterfactual_section(spec: ScenarioSpec, data: Optional[Dataset], seed, workers, n_records, n_cf):
    m = spec.model
    if m is None:
        return _skipped("scenario has no mechanisms")
    if m.graph.sensitive is None or m.graph.outcome is None:
        return _skipped("sensitive and outcome nodes must both be set")
    if data is not None and all(c in data.names for c in m.graph.nodes):
        source = "data"
        rows = [{k: r[k] for k in m.graph.nodes} for r in list(data.records())[:n_records]]
    else:
        source = "model_sample"
        rows = list(sample(m, n_records, seed, workers).records())
    return {"source": source, "records": [_record_entry(m, r, seed, n_cf) for r in rows]}


def metrics_payload(counts: mt.GroupedCounts) -> dict:
    out = {"counts": counts.to_dict()}
    for key, fn in (("demographic_parity", mt.demographic_parity), ("error_rate_parity", mt.error_rate_parity),
                    ("predictive_parity", mt.predictive_parity)):
        try:
            out[key] = fn(counts).to_dict()
        except FairlensError as exc:
            out[key] = _error(exc)
    return out


def _metrics_section(spec: ScenarioSpec, data: Optional[Dataset]):
    b = spec.bindings
    if data is not None and b is not None:
        try:
            counts = mt.confusion(data, b.group, b.label, b.prediction, b.score, b.threshold)
        except FairlensError as exc:
            return _error(exc)
        out = {"source": "data", "bindings": b.to_dict(), **metrics_payload(counts)}
        if b.score is not None:
            scores, groups = data.column(b.score), data.column(b.group)
            out["dp_gap_curve"] = {
                "thresholds": list(CURVE_THRESHOLDS),
                "gaps": [float(v) for v in mt.dp_gap_curve(scores, groups, CURVE_THRESHOLDS)],
            }
            try:
                out["calibration"] = mt.calibration_check(scores, data.column(b.label), groups).to_dict()
            except FairlensError as exc:
                out["calibration"] = _error(exc)
        return out
    if spec.counts is not None:
        return {"source": "counts", **metrics_payload(spec.counts)}
    return _skipped("no dataset bindings or counts")


def build_report(
    spec: ScenarioSpec,
    spec_bytes: bytes,
    data: Optional[Dataset] = None,
    data_bytes: Optional[bytes] = None,
    seed: int = 0,
    workers: int = 1,
    n_mc: int = fx.DEFAULT_MC_SAMPLES,
    n_records: int = DEFAULT_REPORT_RECORDS,
    n_cf: int = cf.DEFAULT_CF_SAMPLES,
) -> dict:
    inputs = {"spec_sha256": sha256(spec_bytes)}
    if data_bytes is not None:
        inputs["data_sha256"] = sha256(data_bytes)
    g = spec.graph
    if g.sensitive is not None and g.outcome is not None:
        try:
            audit = audit_paths(g)
            audit_section = audit.to_dict()
            recommendation = recommend_criteria(audit).to_dict()
        except FairlensError as exc:
            audit_section = recommendation = _error(exc)
    else:
        audit_section = recommendation = _skipped("sensitive and outcome nodes must both be set")
    return {
        "schema": SCHEMA,
        "tool": {"name": "fairlens", "version": __version__},
        "scenario": spec.name,
        "inputs": inputs,
        "seed": seed,
        "settings": {"mc_samples": n_mc, "report_records": n_records, "counterfactual_samples": n_cf},
        "sections": {
            "audit": audit_section,
            "recommendation": recommendation,
            "effects": _effects_section(spec, seed, workers, n_mc),
            "counterfactuals": _counterfactual_section(spec, data, seed, workers, n_records, n_cf),
            "metrics": _metrics_section(spec, data),
        },
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    """Stable JSON text; floats use the shortest round-trip form."""
    return json.dumps(_clean(report), indent=2, ensure_ascii=False, allow_nan=False) + "\n"
