"""Command-line front end: ``rmtl analyze`` and ``rmtl simulate``."""

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pydantic

from . import contrasts, inference, simulation
from .estimators import fit_all
from .exceptions import DomainError, NumericalError, RmtlError
from .io import ingest_csv, read_contrast_file
from .numerics import RngStream

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3
METHOD_NAMES = ("asymptotic", "permutation", "multiple", "asymptotic-bonf", "permutation-bonf")


@dataclass
class AnalysisRequest:
    input: str
    tau: float
    alpha: float = 0.05
    methods: list = field(default_factory=lambda: ["multiple"])
    contrast: str = "dunnett"
    per_event: bool = False
    causes: list = None
    B: int = 1999
    seed: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("--tau must be positive")
        if not 0 < self.alpha < 1:
            raise DomainError("--alpha must lie in (0, 1)")
        if self.B < 1:
            raise DomainError("--B must be >= 1")
        bad = [m for m in self.methods if m not in METHOD_NAMES]
        if bad:
            raise DomainError(f"unknown method(s) {bad}")


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _contrast_for(request, k, M):
    if request.contrast.startswith("file:"):
        return read_contrast_file(request.contrast[5:], k, M)
    if request.causes:
        mode = "selected_events"
    elif request.per_event:
        mode = "per_event"
    else:
        mode = "all_events"
    return contrasts.builtin(request.contrast, k, M, mode=mode, causes=request.causes)


def _run_method(name, stream, samples, summary, spec, request):
    if name == "asymptotic":
        res = inference.asymptotic_global_test(summary, spec, request.alpha)
        out = {"kind": "global", **res.to_dict()}
    elif name == "permutation":
        res = inference.permutation_global_test(samples, spec, request.tau, request.alpha,
                                                request.B, stream, summary=summary)
        out = {"kind": "global", **res.to_dict()}
    elif name == "multiple":
        out = {"kind": "multiple",
               **inference.multiple_asymptotic_test(summary, spec, request.alpha, request.B,
                                                    stream).to_dict()}
    else:
        method = name.split("-")[0]
        out = {"kind": "multiple",
               **inference.bonferroni_multiple(samples, spec, request.tau, request.alpha, method,
                                               request.B, stream, summary=summary).to_dict()}
    if out["kind"] == "global":
        out["critical_value"] = _finite(out["critical_value"])
        if spec.r == 1:
            out["interval"] = list(inference.confidence_interval(summary, spec.H,
                                                                 res.critical_value))
    else:
        for hyp in out["hypotheses"]:
            hyp["critical_value"] = _finite(hyp["critical_value"])
            if hyp["interval"] is not None:
                hyp["interval"] = [_finite(v) for v in hyp["interval"]]
    out["method"] = name
    return out


def analyze(request):
    """Run the requested analysis and return a JSON-serializable report."""
    labels, samples = ingest_csv(request.input)
    summary = fit_all(samples, request.tau)
    k, M = len(samples), summary.M
    report = {
        "schema_version": SCHEMA_VERSION,
        "input": str(request.input),
        "tau": request.tau,
        "alpha": request.alpha,
        "B": request.B,
        "seed": request.seed,
        "k": k,
        "M": M,
        "n": summary.n,
        "groups": [
            {
                "index": i + 1,
                "label": lab,
                "n": fit.n,
                "rmtl": fit.rmtl.tolist(),
                "se": fit.standard_errors.tolist(),
                "covariance": fit.covariance.tolist(),
                "warnings": list(fit.warnings),
            }
            for i, (lab, fit) in enumerate(zip(labels, summary.group_fits))
        ],
        "sigma_hat": summary.sigma_hat.tolist(),
        "warnings": summary.warnings,
        "contrast": None,
        "results": [],
    }
    if k < 2:
        report["warnings"].append("single group: estimation only, no tests performed")
        return report
    spec = _contrast_for(request, k, M)
    report["contrast"] = spec.to_dict()
    root = RngStream(request.seed)
    for j, name in enumerate(request.methods):
        report["results"].append(_run_method(name, root.child(j), samples, summary, spec,
                                             request))
    return report


def _fmt(x, width=10):
    if x is None:
        return f"{'inf':>{width}}"
    return f"{x:>{width}.4g}"


def render_table(report):
    lines = ["groups:"]
    for g in report["groups"]:
        lines.append(f"  {g['index']}: {g['label']} (n={g['n']})")
    lines.append("")
    lines.append(f"RMTL up to tau={report['tau']:g}")
    lines.append(f"  {'group':<12}{'cause':>6}{'rmtl':>12}{'se':>12}")
    for g in report["groups"]:
        for m, (mu, se) in enumerate(zip(g["rmtl"], g["se"]), start=1):
            lines.append(f"  {g['label']:<12}{m:>6}{mu:>12.4f}{se:>12.4f}")
    for res in report["results"]:
        lines.append("")
        if res["kind"] == "global":
            lines.append(f"[{res['method']}] W={res['statistic']:.4f} df={res['df']} "
                         f"crit={_fmt(res['critical_value'], 0)} p={res['p_value']:.4g} "
                         f"reject={res['rejected']}")
            continue
        head = f"[{res['method']}] alpha={res['alpha']}"
        if res["method"] == "multiple":
            head += f" local level={res['local_level']:.5g}"
        lines.append(head)
        lines.append(f"  {'hypothesis':<16}{'W':>10}{'p':>10}{'adj p':>10}  reject  interval")
        for h in res["hypotheses"]:
            iv = h["interval"]
            iv_s = "" if iv is None else f"[{_fmt(iv[0], 0)}, {_fmt(iv[1], 0)}]"
            lines.append(f"  {h['label']:<16}{h['statistic']:>10.4f}{h['p_value']:>10.4g}"
                         f"{h['adjusted_p_value']:>10.4g}  {str(h['rejected']):<6}  {iv_s}")
    warnings = report["warnings"] + [w for r in report["results"] for w in r.get("warnings", [])]
    if warnings:
        lines.append("")
        lines.append("WARNINGS:")
        lines.extend(f"  ! {w}" for w in warnings)
    return "\n".join(lines)


def dumps(report):
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False)


def load_config(path=None, preset=None, **overrides):
    """Scenario from a JSON file (optionally naming a ``preset``) plus overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise DomainError(f"{path}: top level must be an object")
    preset = data.pop("preset", preset)
    data.update({k: v for k, v in overrides.items() if v is not None})
    if preset is not None:
        return simulation.preset(preset, **data)
    return simulation.ScenarioConfig(**data)


def simulate(config_path=None, out_dir=None, preset=None, workers=1, replications=None,
             timing=False):
    cfg = load_config(config_path, preset, replications=replications)
    report = simulation.run_study(cfg, workers=workers)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "study.json").write_text(report.to_json(include_timing=timing) + "\n")
        (out / "study.csv").write_text(report.to_csv())
    return report


def render_study(report):
    lo, hi = report.band
    lines = [f"replications={report.replications}  band=[{lo:.4f}, {hi:.4f}]",
             f"  {'method':<18}{'global':>10}{'fwer':>10}"]
    for m in report.methods:
        fwer = report.fwer[m]
        lines.append(f"  {m:<18}{report.global_rejection[m]:>10.4f}"
                     f"{'-' if fwer is None else format(fwer, '.4f'):>10}")
    return "\n".join(lines)


def _causes(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("--causes expects a comma-separated list of integers")


def build_parser():
    parser = argparse.ArgumentParser(prog="rmtl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="test RMTL contrasts on a group,time,status CSV")
    a.add_argument("input")
    a.add_argument("--tau", type=float, required=True)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--B", type=int, default=1999, dest="B")
    a.add_argument("--seed", type=int, default=1)
    a.add_argument("--method", action="append", choices=METHOD_NAMES, dest="methods",
                   help="may be repeated; default: multiple")
    a.add_argument("--contrast", default="dunnett", help="dunnett | tukey | 2x2 | file:PATH")
    a.add_argument("--per-event", action="store_true")
    a.add_argument("--causes", type=_causes, default=None)
    a.add_argument("--out", default=None, help="write the JSON report here")
    a.add_argument("--format", choices=("table", "json"), default="table")

    s = sub.add_parser("simulate", help="run a simulation study")
    s.add_argument("config", nargs="?", default=None, help="JSON scenario file")
    s.add_argument("--preset", choices=sorted(simulation.PRESETS), default=None)
    s.add_argument("--replications", type=int, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None, help="directory for study.json / study.csv")
    s.add_argument("--timing", action="store_true", help="include runtime in study.json")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            if args.contrast not in ("dunnett", "tukey", "2x2") \
                    and not args.contrast.startswith("file:"):
                raise DomainError(f"unknown --contrast {args.contrast!r}")
            request = AnalysisRequest(args.input, args.tau, args.alpha,
                                      args.methods or ["multiple"], args.contrast,
                                      args.per_event, args.causes, args.B, args.seed)
            report = analyze(request)
            text = dumps(report)
            if args.out:
                Path(args.out).write_text(text + "\n")
            print(text if args.format == "json" else render_table(report))
        else:
            if args.config is None and args.preset is None:
                raise DomainError("give a config file or --preset")
            report = simulate(args.config, args.out, args.preset, args.workers,
                              args.replications, args.timing)
            print(render_study(report))
    except pydantic.ValidationError as exc:
        print(f"error: invalid configuration\n{exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RmtlError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
