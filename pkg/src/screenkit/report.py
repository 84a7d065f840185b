"""Report assembly and rendering.

Numbers are produced once, by the metrics and agreement modules, and stored
in a machine-readable report dict; the text/figure renderers only format what
is already there. Rendering uses two decimals for percentages and three for
agreement coefficients, rounding halves away from zero.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from . import agreement as ag
from . import metrics as mx
from .corpus import Corpus, StudyRecord
from .errors import ScreenKitError
from .inference import RunLedger

REPORT_KIND = "screening-evaluation-report"
AGREEMENT_KIND = "screening-agreement-report"


class ReportError(ScreenKitError):
    """Raised for mismatched evaluation inputs or malformed report files."""


def evaluation_items(corpus: Corpus, ledger: RunLedger) -> list[StudyRecord]:
    """Corpus records covered by the ledger, in corpus order."""
    ledger_ids = set(ledger.item_ids())
    items = [record for record in corpus.records if record.id in ledger_ids]
    if not items:
        raise ReportError("ledger and corpus share no study ids")
    return items


def _result_dict(result: ag.AgreementResult) -> dict:
    out = {
        "statistic": result.statistic,
        "estimate": result.estimate,
        "p_o": result.p_o,
        "p_e": result.p_e,
        "n": result.n,
        "r": result.r,
        "degenerate": result.degenerate,
    }
    if result.ci_low is not None:
        out["ci_low"] = result.ci_low
        out["ci_high"] = result.ci_high
    return out


def _class_dict(cls: mx.ClassMetrics) -> dict:
    return {
        "label": int(cls.label),
        "name": "Exclude" if int(cls.label) == 0 else "Include",
        "support": cls.support,
        "precision": cls.precision,
        "recall": cls.recall,
        "f1": cls.f1,
    }


def build_evaluation_report(
    corpus: Corpus,
    ledger: RunLedger,
    bootstrap_spec: ag.BootstrapSpec | None = None,
) -> dict:
    """Full evaluation of a ledger against human labels.

    Per temperature: overall metrics, per-class metrics, row-normalized
    confusion, and human-vs-pass agreement. Across temperatures: pairwise
    consistency and multi-rater statistics (with bootstrap CIs when a
    bootstrap spec is supplied).
    """
    items = evaluation_items(corpus, ledger)
    item_ids = [record.id for record in items]
    human = [int(record.human_label) for record in items]
    columns = ledger.decision_columns(item_ids)

    settings = []
    for name, decisions in columns.items():
        cm = mx.confusion_from_columns(human, decisions)
        overall = mx.aggregate(cm)
        exclude_cls, include_cls = mx.per_class_metrics(cm)
        pct = mx.row_normalize(cm)
        kappa = ag.cohen_kappa(human, decisions)
        settings.append(
            {
                "setting": name,
                "n": cm.total,
                "confusion": {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn},
                "overall": {
                    "accuracy": overall.accuracy,
                    "balanced_accuracy": overall.balanced_accuracy,
                    "macro_f1": overall.macro_f1,
                    "macro_f2": overall.macro_f2,
                    "weighted_f1": overall.weighted_f1,
                    "weighted_f2": overall.weighted_f2,
                },
                "per_class": [_class_dict(exclude_cls), _class_dict(include_cls)],
                "confusion_pct": {
                    "true0_pred0": pct.true0_pred0,
                    "true0_pred1": pct.true0_pred1,
                    "true1_pred0": pct.true1_pred0,
                    "true1_pred1": pct.true1_pred1,
                },
                "agreement": {
                    "cohen_kappa": _result_dict(kappa),
                    "pabak": _result_dict(ag.pabak(human, decisions)),
                    "gwet_ac1": _result_dict(ag.gwet_ac1_pairwise(human, decisions)),
                },
            }
        )

    consistency = []
    if len(columns) >= 2:
        for name_a, name_b, result in ag.pairwise_consistency(columns):
            consistency.append({"a": name_a, "b": name_b, **_result_dict(result)})

    multi_rater = None
    if len(columns) >= 1:
        matrix = ag.RatingMatrix.from_columns(
            {"human": human, **columns}, item_ids=item_ids
        )
        if bootstrap_spec is not None:
            fleiss = ag.with_ci(ag.fleiss_kappa, matrix, bootstrap_spec)
            ac1 = ag.with_ci(ag.gwet_ac1_multi, matrix, bootstrap_spec)
        else:
            fleiss = ag.fleiss_kappa(matrix)
            ac1 = ag.gwet_ac1_multi(matrix)
        multi_rater = {
            "n_raters": matrix.n_raters,
            "fleiss_kappa": _result_dict(fleiss),
            "gwet_ac1": _result_dict(ac1),
        }

    return {
        "kind": REPORT_KIND,
        "run_id": ledger.run_id,
        "endpoint": ledger.endpoint,
        "n_items": len(items),
        "settings": settings,
        "consistency": consistency,
        "multi_rater": multi_rater,
    }


def build_agreement_report(
    matrix: ag.RatingMatrix, bootstrap_spec: ag.BootstrapSpec | None = None
) -> dict:
    """Agreement-only report over a rating matrix.

    The first rater column is the reference (typically the human screener):
    it is compared pairwise against every other rater; multi-rater statistics
    span all columns; consistency covers the non-reference raters.
    """
    reference = matrix.rater_ids[0]
    ref_column = matrix.column(reference)

    pairwise = []
    for rater in matrix.rater_ids[1:]:
        column = matrix.column(rater)
        pairwise.append(
            {
                "rater": rater,
                "cohen_kappa": _result_dict(ag.cohen_kappa(ref_column, column)),
                "pabak": _result_dict(ag.pabak(ref_column, column)),
                "gwet_ac1": _result_dict(ag.gwet_ac1_pairwise(ref_column, column)),
            }
        )

    if bootstrap_spec is not None:
        fleiss = ag.with_ci(ag.fleiss_kappa, matrix, bootstrap_spec)
        ac1 = ag.with_ci(ag.gwet_ac1_multi, matrix, bootstrap_spec)
    else:
        fleiss = ag.fleiss_kappa(matrix)
        ac1 = ag.gwet_ac1_multi(matrix)

    consistency = []
    others = {rater: matrix.column(rater) for rater in matrix.rater_ids[1:]}
    if len(others) >= 2:
        for name_a, name_b, result in ag.pairwise_consistency(others):
            consistency.append({"a": name_a, "b": name_b, **_result_dict(result)})

    return {
        "kind": AGREEMENT_KIND,
        "n_items": matrix.n_items,
        "reference": reference,
        "pairwise": pairwise,
        "multi_rater": {
            "n_raters": matrix.n_raters,
            "fleiss_kappa": _result_dict(fleiss),
            "gwet_ac1": _result_dict(ac1),
        },
        "consistency": consistency,
    }


def write_report_json(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_report_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"report file not found: {path}")
    report = json.loads(path.read_text(encoding="utf-8"))
    if report.get("kind") not in (REPORT_KIND, AGREEMENT_KIND):
        raise ReportError(f"{path} is not a screening report")
    return report


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells: Sequence[str]) -> str:
        left = cells[0].ljust(widths[0])
        rest = [cell.rjust(widths[i + 1]) for i, cell in enumerate(cells[1:])]
        return "  ".join([left, *rest]).rstrip()
    return [fmt(headers), *(fmt(row) for row in rows)]


def _coeff(value: float | None) -> str:
    return mx.decimal_str(value, 3)


def _agreement_row(block: dict) -> list[str]:
    kappa, pab, ac1 = block["cohen_kappa"], block["pabak"], block["gwet_ac1"]
    flag = " (degenerate)" if kappa.get("degenerate") else ""
    return [
        mx.percent_str(kappa["p_o"]),
        _coeff(kappa["estimate"]) + flag,
        _coeff(pab["estimate"]),
        _coeff(ac1["estimate"]),
    ]


def _multi_rater_lines(multi: dict) -> list[str]:
    rows = []
    for key, label in (("fleiss_kappa", "Fleiss' kappa"), ("gwet_ac1", "Gwet AC1")):
        block = multi[key]
        ci_low = _coeff(block["ci_low"]) if "ci_low" in block else "--"
        ci_high = _coeff(block["ci_high"]) if "ci_high" in block else "--"
        rows.append([label, _coeff(block["estimate"]), ci_low, ci_high])
    return _table(["Statistic", "Estimate", "CI95 low", "CI95 high"], rows)


def render_report_text(report: dict) -> str:
    """Human-readable tables for an evaluation report (formatting only)."""
    if report.get("kind") != REPORT_KIND:
        raise ReportError("not an evaluation report")
    lines: list[str] = []
    lines.append("SCREENING EVALUATION REPORT")
    lines.append(f"run {report['run_id']}  endpoint {report['endpoint']}  items {report['n_items']}")
    lines.append("")

    lines.append("Overall (percent)")
    rows = []
    for s in report["settings"]:
        o = s["overall"]
        rows.append(
            [
                s["setting"],
                str(s["n"]),
                mx.percent_str(o["accuracy"]),
                mx.percent_str(o["balanced_accuracy"]),
                mx.percent_str(o["macro_f1"]),
                mx.percent_str(o["macro_f2"]),
                mx.percent_str(o["weighted_f1"]),
                mx.percent_str(o["weighted_f2"]),
            ]
        )
    lines += _table(
        ["Setting", "N", "Acc.", "Bal. Acc.", "Macro-F1", "Macro-F2", "W-F1", "W-F2"], rows
    )
    lines.append("")

    lines.append("Per-class (percent)")
    rows = []
    for s in report["settings"]:
        for c in s["per_class"]:
            rows.append(
                [
                    s["setting"],
                    f"{c['label']} ({c['name']})",
                    str(c["support"]),
                    mx.percent_str(c["precision"]),
                    mx.percent_str(c["recall"]),
                    mx.percent_str(c["f1"]),
                ]
            )
    lines += _table(["Setting", "Class", "Support", "Prec.", "Rec.", "F1"], rows)
    lines.append("")

    lines.append("Confusion matrices (row-normalized percent)")
    rows = []
    for s in report["settings"]:
        pct = s["confusion_pct"]
        rows.append(
            [s["setting"], "True 0 (Exclude)",
             mx.percent_str(None if pct["true0_pred0"] is None else pct["true0_pred0"] / 100.0),
             mx.percent_str(None if pct["true0_pred1"] is None else pct["true0_pred1"] / 100.0)]
        )
        rows.append(
            [s["setting"], "True 1 (Include)",
             mx.percent_str(None if pct["true1_pred0"] is None else pct["true1_pred0"] / 100.0),
             mx.percent_str(None if pct["true1_pred1"] is None else pct["true1_pred1"] / 100.0)]
        )
    lines += _table(["Setting", "True class", "Pred 0", "Pred 1"], rows)
    lines.append("")

    lines.append("Agreement with human labels")
    rows = []
    for s in report["settings"]:
        rows.append([s["setting"], str(s["n"]), *_agreement_row(s["agreement"])])
    lines += _table(["Setting", "N", "P_o (%)", "Cohen's kappa", "PABAK", "Gwet AC1"], rows)
    lines.append("")

    if report.get("multi_rater"):
        multi = report["multi_rater"]
        lines.append(f"Multi-rater (human + all passes, {multi['n_raters']} raters)")
        lines += _multi_rater_lines(multi)
        lines.append("")

    if report.get("consistency"):
        lines.append("Pass-to-pass consistency (pairwise Cohen's kappa)")
        rows = []
        for pair in report["consistency"]:
            flag = " (degenerate)" if pair.get("degenerate") else ""
            rows.append([f"{pair['a']} vs {pair['b']}", _coeff(pair["estimate"]) + flag])
        lines += _table(["Pair", "Kappa"], rows)
        lines.append("")

    return "\n".join(lines)


def render_agreement_text(report: dict) -> str:
    if report.get("kind") != AGREEMENT_KIND:
        raise ReportError("not an agreement report")
    lines: list[str] = []
    lines.append("SCREENING AGREEMENT REPORT")
    lines.append(f"items {report['n_items']}  reference rater {report['reference']}")
    lines.append("")

    lines.append(f"Pairwise ({report['reference']} vs each rater)")
    rows = []
    for block in report["pairwise"]:
        rows.append(
            [block["rater"], str(block["cohen_kappa"]["n"]), *_agreement_row(block)]
        )
    lines += _table(["Rater", "N", "P_o (%)", "Cohen's kappa", "PABAK", "Gwet AC1"], rows)
    lines.append("")

    multi = report["multi_rater"]
    lines.append(f"Multi-rater (all {multi['n_raters']} raters)")
    lines += _multi_rater_lines(multi)
    lines.append("")

    if report.get("consistency"):
        lines.append("Consistency between non-reference raters (pairwise Cohen's kappa)")
        rows = []
        for pair in report["consistency"]:
            flag = " (degenerate)" if pair.get("degenerate") else ""
            rows.append([f"{pair['a']} vs {pair['b']}", _coeff(pair["estimate"]) + flag])
        lines += _table(["Pair", "Kappa"], rows)
        lines.append("")

    return "\n".join(lines)


_PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def render_report_figures(report: dict, out_dir: str | Path) -> list[Path]:
    """Render confusion heatmaps, an overall-metrics chart, and an agreement
    chart from an evaluation report. Reads the report dict only."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if report.get("kind") != REPORT_KIND:
        raise ReportError("not an evaluation report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []

    for s in report["settings"]:
        pct = s["confusion_pct"]
        grid = [
            [pct["true0_pred0"] or 0.0, pct["true0_pred1"] or 0.0],
            [pct["true1_pred0"] or 0.0, pct["true1_pred1"] or 0.0],
        ]
        fig, ax = plt.subplots(figsize=(3.4, 3.0))
        ax.imshow(grid, cmap="Blues", vmin=0.0, vmax=100.0)
        for i in range(2):
            for j in range(2):
                shade = "white" if grid[i][j] > 50.0 else "black"
                ax.text(j, i, f"{grid[i][j]:.2f}", ha="center", va="center", color=shade)
        ax.set_xticks([0, 1], ["Pred 0", "Pred 1"])
        ax.set_yticks([0, 1], ["True 0", "True 1"])
        ax.set_title(f"Confusion ({s['setting']}, row %)")
        fig.tight_layout()
        safe = s["setting"].replace("=", "").replace("/", "_")
        paths.append(_save(fig, out_dir / f"confusion_{safe}.png"))

    metric_keys = [
        ("accuracy", "Acc."),
        ("balanced_accuracy", "Bal. Acc."),
        ("macro_f1", "Macro-F1"),
        ("macro_f2", "Macro-F2"),
        ("weighted_f1", "W-F1"),
        ("weighted_f2", "W-F2"),
    ]
    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    width = 0.8 / max(len(report["settings"]), 1)
    for k, s in enumerate(report["settings"]):
        values = [100.0 * (s["overall"][key] or 0.0) for key, _ in metric_keys]
        offsets = [i + k * width for i in range(len(metric_keys))]
        ax.bar(offsets, values, width=width, label=s["setting"])
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metric_keys))])
    ax.set_xticklabels([label for _, label in metric_keys])
    ax.set_ylabel("percent")
    ax.set_ylim(0, 105)
    ax.set_title("Overall classification metrics")
    ax.legend(fontsize=8)
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "overall_metrics.png"))

    coeff_keys = [("cohen_kappa", "Cohen's kappa"), ("pabak", "PABAK"), ("gwet_ac1", "Gwet AC1")]
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for k, s in enumerate(report["settings"]):
        values = [s["agreement"][key]["estimate"] for key, _ in coeff_keys]
        offsets = [i + k * width for i in range(len(coeff_keys))]
        ax.bar(offsets, values, width=width, label=s["setting"])
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(coeff_keys))])
    ax.set_xticklabels([label for _, label in coeff_keys])
    ax.set_ylim(-1.0, 1.05)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("coefficient")
    ax.set_title("Agreement with human labels")
    ax.legend(fontsize=8)
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "agreement.png"))

    return paths


def render_agreement_figure(report: dict, out_dir: str | Path) -> list[Path]:
    """Bar chart of pairwise and multi-rater coefficients (with CI whiskers)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if report.get("kind") != AGREEMENT_KIND:
        raise ReportError("not an agreement report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    labels: list[str] = []
    values: list[float] = []
    errors: list[tuple[float, float]] = []
    for block in report["pairwise"]:
        for key, tag in (("cohen_kappa", "kappa"), ("pabak", "PABAK"), ("gwet_ac1", "AC1")):
            labels.append(f"{block['rater']}\n{tag}")
            values.append(block[key]["estimate"])
            errors.append((0.0, 0.0))
    multi = report["multi_rater"]
    for key, tag in (("fleiss_kappa", "Fleiss"), ("gwet_ac1", "AC1 (multi)")):
        block = multi[key]
        labels.append(f"all raters\n{tag}")
        values.append(block["estimate"])
        if "ci_low" in block:
            errors.append((block["estimate"] - block["ci_low"], block["ci_high"] - block["estimate"]))
        else:
            errors.append((0.0, 0.0))

    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(labels)), 3.6))
    err = [[e[0] for e in errors], [e[1] for e in errors]]
    ax.bar(range(len(values)), values, yerr=err, capsize=3, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylim(-1.0, 1.05)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("coefficient")
    ax.set_title(f"Agreement vs {report['reference']} and multi-rater")
    fig.tight_layout()
    return [_save(fig, out_dir / "agreement.png")]


def disagreement_rows(corpus: Corpus, ledger: RunLedger) -> tuple[list[str], list[list[str]]]:
    """Items where any pass differs from the human label, with raw outputs."""
    items = evaluation_items(corpus, ledger)
    item_ids = [record.id for record in items]
    ledger.validate_complete()
    by_key = {(r.study_id, r.temperature): r for r in ledger.records}
    temps = ledger.temperatures

    header = ["id", "title", "human"]
    for t in temps:
        tag = f"T{t:g}"
        header += [f"decision_{tag}", f"route_{tag}", f"raw_{tag}"]

    rows: list[list[str]] = []
    for record in items:
        passes = [by_key[(record.id, t)] for t in temps]
        if all(int(p.decision) == int(record.human_label) for p in passes):
            continue
        row = [record.id, record.title, str(int(record.human_label))]
        for p in passes:
            row += [str(int(p.decision)), p.parse_route, p.raw_text]
        rows.append(row)
    return header, rows


def write_disagreements_csv(corpus: Corpus, ledger: RunLedger, path: str | Path) -> int:
    header, rows = disagreement_rows(corpus, ledger)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return len(rows)
