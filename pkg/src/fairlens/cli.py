"""Command line interface: ``fairlens <command> ...``.

Exit status: 0 on success, 2 for usage errors, 3 for validation failures
and 4 for numerical failures.  Errors are written to stderr as one JSON
object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import counterfactual as cf
from . import effects as fx
from . import metrics as mt
from .dataio import load_csv, write_csv
from .dsl import Bindings, ScenarioSpec, parse_spec, serialize
from .errors import FairlensError, ValidationError
from .graph import audit_paths, minimal_adjustment_sets, recommend_criteria
from .presets import preset, preset_names
from .report import build_report, dumps, metrics_payload
from .scm import sample

USAGE, VALIDATION, NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def default_seed() -> int:
    raw = os.environ.get("FAIRLENS_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"FAIRLENS_SEED must be an integer, got {raw!r}") from None


def load_spec(ref: str) -> tuple[ScenarioSpec, bytes]:
    """A ``.cg`` path or the name of a built-in scenario."""
    path = Path(ref)
    if path.is_file():
        data = path.read_bytes()
        return parse_spec(data.decode("utf-8")), data
    if ref in preset_names():
        spec = preset(ref)
        return spec, serialize(spec).encode("utf-8")
    raise UsageError(f"no such spec file or preset: {ref!r} (presets: {', '.join(preset_names())})")


def _read_data(path, bindings=None, required=()):
    try:
        return load_csv(path, bindings, required)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def parse_edges(text: str) -> set:
    edges = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "->" not in part:
            raise UsageError(f"edges are written U->V, got {part!r}")
        u, v = (s.strip() for s in part.split("->", 1))
        edges.add((u, v))
    return edges


def parse_values(text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise UsageError(f"values are written NODE=number, got {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        try:
            out[k] = float(v)
        except ValueError:
            raise UsageError(f"not a number for {k}: {v!r}") from None
    return out


def parse_flip(text: str) -> tuple[float, float]:
    try:
        a, a_bar = text.split(":")
        return float(a), float(a_bar)
    except ValueError:
        raise UsageError(f"--flip takes a:a_bar, e.g. 1:0, got {text!r}") from None


def parse_floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.6g}"
    return str(v)


def table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def emit(text: str = ""):
    sys.stdout.write(text + "\n")


def _require_model(spec: ScenarioSpec):
    if spec.model is None:
        raise ValidationError(f"scenario {spec.name} has no mechanisms")
    return spec.model


# ---------------------------------------------------------------- commands

def cmd_audit(args):
    spec, _ = load_spec(args.spec)
    audit = audit_paths(spec.graph)
    rec = recommend_criteria(audit)
    if args.json:
        emit(json.dumps({"audit": audit.to_dict(), "recommendation": rec.to_dict()}, indent=2))
        return 0
    causal = audit.causal_paths()
    emit(f"scenario {spec.name}: sensitive {audit.sensitive}, outcome {audit.outcome}")
    emit(f"causal paths to {audit.outcome}: {len(causal)}")
    rows = [(e.target, str(e.path), e.kind, e.fairness, e.open_marginally, e.problematic) for e in audit.entries]
    emit(table(["target", "path", "kind", "fairness", "open", "problematic"], rows))
    emit()
    emit(table(["criterion", "appropriate"], [
        ("demographic parity", rec.dp_appropriate),
        ("equal error rates", rec.error_rate_parity_appropriate),
        ("calibration", rec.calibration_appropriate),
    ]))
    emit(rec.rationale)
    return 0


def cmd_sample(args):
    spec, _ = load_spec(args.spec)
    m = _require_model(spec)
    ds = sample(m, args.n, args.seed, args.workers)
    if args.out:
        write_csv(ds, args.out)
    rows = [(n, float(ds.column(n).mean()), float(ds.column(n).std(ddof=1)) if len(ds) > 1 else 0.0)
            for n in ds.names]
    emit(f"{len(ds)} records, seed {args.seed}" + (f", written to {args.out}" if args.out else ""))
    emit(table(["node", "mean", "std"], rows))
    return 0


def _effect(args, spec):
    m = spec.model
    kw = dict(method=args.method, n=args.n, seed=args.seed, workers=args.workers)
    a, a_bar = args.a, args.a_bar
    kind = args.kind
    if kind == "backdoor":
        g = spec.graph
        if args.adjust is not None:
            adjust = [c.strip() for c in args.adjust.split(",") if c.strip()]
        else:
            sets = minimal_adjustment_sets(g, g.sensitive, g.outcome)
            if not sets:
                raise ValidationError("no adjustment set satisfies the back-door criterion")
            adjust = sorted(sets[0])
        if args.data:
            source = _read_data(args.data, required=[g.sensitive, g.outcome, *adjust])
            return fx.backdoor_effect(source, a, a_bar, adjust, graph=g, **kw), {"adjustment": adjust}
        return fx.backdoor_effect(_require_model(spec), a, a_bar, adjust, **kw), {"adjustment": adjust}
    m = _require_model(spec)
    if kind == "ate":
        return fx.ate(m, a, a_bar, **kw), {}
    if kind == "ade":
        return fx.ade(m, a, a_bar, active_variant=args.variant == fx.ACTIVE_DIRECT, **kw), {}
    if kind == "aie":
        return fx.aie(m, a, a_bar, variant=args.variant, **kw), {}
    if kind == "pse":
        if not args.active_edges:
            raise UsageError("--kind pse needs --active-edges")
        spec_ = fx.PathInterventionSpec(a_bar, a, parse_edges(args.active_edges))
        return fx.pse(m, spec_, **kw), {"active_edges": sorted(f"{u}->{v}" for u, v in spec_.active_edges)}
    if kind == "ett":
        return fx.ett(m, a, a_bar, **kw), {}
    if kind == "nci":
        return fx.nci(m, a, a_bar, **kw), {}
    return fx.observed_gap(m, a, a_bar, **kw), {}


def cmd_effects(args):
    spec, _ = load_spec(args.spec)
    est, extra = _effect(args, spec)
    payload = {"kind": args.kind, "a": args.a, "a_bar": args.a_bar, **extra, **est.to_dict()}
    if args.json:
        emit(json.dumps(payload, indent=2))
        return 0
    rows = [(k, v if not isinstance(v, list) else ",".join(v)) for k, v in payload.items()]
    emit(table(["quantity", "value"], rows))
    return 0


def _get_record(args, spec):
    m = spec.model
    if args.values is not None:
        return parse_values(args.values)
    if args.data:
        ds = _read_data(args.data, required=[m.graph.sensitive])
        if not 0 <= args.record < len(ds):
            raise UsageError(f"--record {args.record} outside 0..{len(ds) - 1}")
        rec = ds[args.record]
        return {k: v for k, v in rec.items() if k in m.graph.nodes}
    if args.record < 0:
        raise UsageError("--record must be non-negative")
    return sample(m, args.record + 1, args.seed)[args.record]


def cmd_counterfactual(args):
    spec, _ = load_spec(args.spec)
    m = _require_model(spec)
    a_node, y = m.graph.sensitive, m.graph.outcome
    if a_node is None or y is None:
        raise ValidationError("sensitive and outcome nodes must both be set")
    record = _get_record(args, spec)
    if a_node not in record:
        raise ValidationError(f"the record must include the sensitive node {a_node}")
    a = record[a_node]
    if args.flip:
        fa, a_bar = parse_flip(args.flip)
        if fa != a:
            raise ValidationError(f"--flip starts from {a_node}={fa:g} but the record has {a_node}={a:g}")
    else:
        if not m.mechanisms[a_node].binary:
            raise UsageError(f"{a_node} is not binary; pass --flip a:a_bar")
        a_bar = 1.0 - a
    unfair = parse_edges(args.unfair_edges) if args.unfair_edges is not None else None
    kw = dict(n_samples=args.n, seed=args.seed)

    flip = cf.counterfactual_outcome(m, record, fx.PathInterventionSpec(a_bar, a), **kw)
    regime = cf.fair_regime(m, a, a_bar, unfair)
    path_cf = cf.counterfactual_outcome(m, record, regime, **kw)
    pred = cf.fair_prediction(m, record, unfair, baseline=a_bar, **kw)
    corrected = []
    for node in m.order:
        if node in m.graph.descendants(a_node) and node != y and node in record:
            r = cf.corrected_descendant(m, record, node, regime, **kw)
            corrected.append((node, record[node], r.value, "exact" if r.exact else "monte_carlo", r.std_error))

    if args.json:
        emit(json.dumps({
            "record": record, "a": a, "a_bar": a_bar,
            "links_at_a": sorted(f"{u}->{v}" for u, v in regime.active_edges),
            "flip_all_links": flip.to_dict(), "path_specific": path_cf.to_dict(),
            "fair_prediction": pred.to_dict(),
            "corrected": {n: {"factual": f, "corrected": c} for n, f, c, _, _ in corrected},
        }, indent=2))
        return 0
    emit(table(["node", "value"], sorted(record.items())))
    emit()
    links = ", ".join(f"{u}->{v}" for u, v in sorted(regime.active_edges)) or "none"
    emit(f"links of {a_node} kept at {a:g}: {links}; all other links set to {a_bar:g}")
    rows = [
        (f"{y} with every link at {a_bar:g}", flip.value, "exact" if flip.exact else "monte_carlo", flip.std_error),
        (f"{y} with unfair links at {a_bar:g}", path_cf.value, "exact" if path_cf.exact else "monte_carlo",
         path_cf.std_error),
        ("fair prediction", pred.value, "exact" if pred.exact else "monte_carlo", pred.std_error),
    ]
    emit(table(["quantity", "value", "method", "std_error"], rows))
    if corrected:
        emit()
        emit(table(["descendant", "factual", "corrected", "method", "std_error"], corrected))
    return 0


def cmd_metrics(args):
    if args.counts:
        spec, _ = load_spec(args.counts)
        if spec.counts is None:
            raise ValidationError(f"scenario {spec.name} has no counts")
        counts, scores = spec.counts, None
    else:
        if not (args.data and args.group and args.label):
            raise UsageError("metrics needs --data, --group and --label (or --counts)")
        if (args.pred is None) == (args.score is None):
            raise UsageError("pass exactly one of --pred and --score")
        if args.curve and args.score is None:
            raise UsageError("--curve needs --score")
        b = Bindings(args.group, args.label, args.pred, args.score, args.threshold)
        ds = _read_data(args.data, b)
        counts = mt.confusion(ds, b.group, b.label, b.prediction, b.score, b.threshold)
        scores = ds.column(args.score) if args.score else None
    payload = metrics_payload(counts)
    if scores is not None:
        groups, labels = ds.column(args.group), ds.column(args.label)
        if args.curve:
            ts = parse_floats(args.curve)
            payload["dp_gap_curve"] = {"thresholds": ts, "gaps": [float(g) for g in mt.dp_gap_curve(scores, groups, ts)]}
        payload["calibration"] = mt.calibration_check(scores, labels, groups, args.bins).to_dict()
    if args.json:
        emit(dumps(payload).rstrip("\n"))
        return 0
    rows = []
    for g in mt.GROUPS:
        c = counts[g]
        rows.append((g, c.n, c.tp, c.fp, c.tn, c.fn, c.base_rate, c.positive_rate, c.fpr, c.fnr, c.ppv))
    emit(table(["group", "n", "tp", "fp", "tn", "fn", "base_rate", "pos_rate", "fpr", "fnr", "ppv"], rows))
    emit()
    gaps = []
    for key, label in (("demographic_parity", "positive rate"), ("predictive_parity", "ppv")):
        d = payload[key]
        gaps.append((label, d.get("rates", {}).get("0"), d.get("rates", {}).get("1"), d.get("gap")))
    erp = payload["error_rate_parity"]
    if "fpr" in erp:
        for k in ("fpr", "fnr"):
            gaps.append((k, erp[k]["rates"]["0"], erp[k]["rates"]["1"], erp[k]["gap"]))
    emit(table(["metric", "group 0", "group 1", "gap"], gaps))
    if "dp_gap_curve" in payload:
        emit()
        curve = payload["dp_gap_curve"]
        emit(table(["threshold", "dp gap"], list(zip(curve["thresholds"], curve["gaps"]))))
    if "calibration" in payload:
        cal = payload["calibration"]
        emit()
        e = cal["edges"]
        rows = [(f"[{e[i]:.2f}, {e[i + 1]:.2f}{']' if i == len(e) - 2 else ')'}", cal["counts"]["0"][i],
                 cal["rates"]["0"][i], cal["counts"]["1"][i], cal["rates"]["1"][i]) for i in range(len(e) - 1)]
        emit(table(["bin", "n 0", "p(Y=1) 0", "n 1", "p(Y=1) 1"], rows))
        emit(f"max calibration gap: {fmt(cal['max_gap'])}")
    return 0


def cmd_report(args):
    spec, spec_bytes = load_spec(args.spec)
    data = data_bytes = None
    if args.data:
        data = _read_data(args.data, spec.bindings)
        data_bytes = Path(args.data).read_bytes()
    report = build_report(spec, spec_bytes, data, data_bytes, seed=args.seed, workers=args.workers, n_mc=args.n)
    text = dumps(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        emit(f"report written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser(seed: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairlens", description="Causal fairness analysis of labelled causal graphs.")
    p.add_argument("--version", action="version", version=f"fairlens {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, mc=True):
        sp.add_argument("--seed", type=int, default=seed, help="random seed (default: $FAIRLENS_SEED or 0)")
        sp.add_argument("--workers", type=int, default=1)
        if mc:
            sp.add_argument("--n", type=int, default=fx.DEFAULT_MC_SAMPLES, help="Monte-Carlo sample size")

    sp = sub.add_parser("audit", help="classify paths and recommend fairness criteria")
    sp.add_argument("spec")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("sample", help="draw records from the scenario's model")
    sp.add_argument("spec")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("effects", help="interventional and path-specific effects")
    sp.add_argument("spec")
    sp.add_argument("--kind", required=True, choices=["ate", "ade", "aie", "pse", "ett", "nci", "backdoor", "gap"])
    sp.add_argument("--active-edges")
    sp.add_argument("--adjust")
    sp.add_argument("--data", help="CSV for a plug-in back-door estimate")
    sp.add_argument("--method", choices=[fx.CLOSED, fx.MC], default=fx.CLOSED)
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--a-bar", type=float, default=0.0)
    sp.add_argument("--variant", choices=[fx.BASELINE_DIRECT, fx.ACTIVE_DIRECT], default=fx.BASELINE_DIRECT)
    sp.add_argument("--json", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_effects)

    sp = sub.add_parser("counterfactual", help="counterfactual outcomes and fair prediction for one record")
    sp.add_argument("spec")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--record", type=int, help="index of a record in --data, or of a sampled record")
    src.add_argument("--values", help="explicit record, e.g. A=1,Q=0.3,D=4.5,Y=2")
    sp.add_argument("--data")
    sp.add_argument("--flip", help="a:a_bar, e.g. 1:0")
    sp.add_argument("--unfair-edges")
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--seed", type=int, default=seed)
    sp.add_argument("--n", type=int, default=cf.DEFAULT_CF_SAMPLES, help="posterior sample size")
    sp.set_defaults(func=cmd_counterfactual)

    sp = sub.add_parser("metrics", help="group fairness metrics from a CSV file")
    sp.add_argument("--data")
    sp.add_argument("--counts", help="scenario carrying confusion counts")
    sp.add_argument("--group")
    sp.add_argument("--label")
    sp.add_argument("--pred")
    sp.add_argument("--score")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--curve", help="comma-separated thresholds for the demographic-parity curve")
    sp.add_argument("--bins", type=int, default=mt.DEFAULT_BINS)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("report", help="JSON report over a scenario")
    sp.add_argument("spec")
    sp.add_argument("--data")
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_report)
    return p


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        seed = default_seed()
    except UsageError as exc:
        return _fail("UsageError", str(exc), USAGE)
    parser = build_parser(seed)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), USAGE)
    except FairlensError as exc:
        return _fail(type(exc).__name__, str(exc), exc.exit_code)


if __name__ == "__main__":
    sys.exit(main())
