"""Plain-text tables from a run directory, optionally against a baseline run."""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

__all__ = ["FAMILIES", "REGRESSION_TOL", "load_summary", "render", "report_main"]

# family -> (stage producing it, title)
FAMILIES = {
    "young": ("nfunc-check", "Young inequality"),
    "conjugate": ("nfunc-check", "Conjugation"),
    "hammer": ("nfunc-check", "V/A-map ratios and spreads"),
    "shift": ("nfunc-check", "Shifted-function asymptotics"),
    "solver": ("minimize", "Energy minimization"),
    "scan": ("excess-scan", "Regular-point scan"),
    "decay": ("decay", "Smallness, defect and decay"),
    "truncation": ("truncate-demo", "Lipschitz truncation"),
    "aharmonic": ("aharmonic-check", "A-harmonic solver and interior decay"),
}
REGRESSION_TOL = 0.25


def load_summary(run_dir):
    path = Path(run_dir) / "summary.json"
    if not path.is_file():
        return None
    return json.loads(path.read_text())


def _index(summary):
    out = {}
    if summary:
        for stage in summary.get("stages", {}).values():
            for c in stage.get("checks", []):
                out[(c["family"], c["name"])] = c["value"]
    return out


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _regressed(value, base):
    if value is None or base is None:
        return value is not base
    if base == 0:
        return abs(value) > 1e-12
    return abs(value - base) > REGRESSION_TOL * abs(base)


def _table(rows, header):
    widths = [max(len(str(r[k])) for r in [header, *rows]) for k in range(len(header))]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    return [line(header), line(["-" * w for w in widths]), *map(line, rows)]


def render(summary, baseline=None):
    """Return ``(text, n_regressions)``."""
    base = _index(baseline)
    stages = (summary or {}).get("stages", {})
    lines, regressions = [], 0
    for fam, (stage, title) in FAMILIES.items():
        lines.append(f"== {title} [{fam}] ==")
        st = stages.get(stage)
        checks = [c for c in (st or {}).get("checks", []) if c["family"] == fam]
        if st is None or (not checks and st["status"] == "pass"):
            lines.append("SKIPPED (no artifacts)")
            lines.append("")
            continue
        if not checks:
            lines.append(f"{st['status'].upper()}: {st['message']}")
            lines.append("")
            continue
        rows = []
        for c in checks:
            b = base.get((fam, c["name"]))
            flag = ""
            if baseline is not None and (fam, c["name"]) in base and _regressed(c["value"], b):
                flag = "REGRESSED"
                regressions += 1
            rows.append([c["name"], _fmt(c["value"]), c["bound"],
                         _fmt(b) if (fam, c["name"]) in base else "-",
                         "pass" if c["passed"] else "FAIL", flag])
        lines.extend(_table(rows, ["check", "measured", "bound", "baseline", "status", "diff"]))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n", regressions


def report_main(run_dir, baseline_path=None, stream=None):
    """Print the report; exit 1 only when a baseline comparison regressed."""
    stream = stream or sys.stdout
    summary = load_summary(run_dir)
    if summary is None:
        print(f"warning: no summary.json in {run_dir}; every family is SKIPPED", file=sys.stderr)
    baseline = None
    if baseline_path is not None:
        try:
            baseline = json.loads(Path(baseline_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"cannot read baseline {baseline_path}: {exc}", file=sys.stderr)
            return 2
    text, regressions = render(summary, baseline)
    stream.write(text)
    if regressions:
        stream.write(f"{regressions} value(s) moved more than "
                     f"{math.floor(REGRESSION_TOL * 100)}% from the baseline\n")
        return 1
    return 0
