"""Shared fixtures: reference results for the three evaluation settings and
corpus builders.

The confusion counts below were reconstructed once by the integer search in
oracles.count_search (the search runs as its own acceptance test) and are
frozen here for reuse.
"""

from __future__ import annotations

import pytest

from screenkit.corpus import Corpus, Provenance, ScreeningLabel, StudyRecord

# (support_exclude, support_include) per evaluation setting.
SUPPORTS = {
    "base_full": (8243, 34),
    "tuned_holdout": (39, 17),
    "tuned_full": (8243, 34),
}

# Row-normalized confusion cells in percent: ((true0->pred0, true0->pred1),
# (true1->pred0, true1->pred1)).
CONFUSION_PCT = {
    "base_full": ((6.14, 93.86), (0.00, 100.00)),
    "tuned_holdout": ((94.87, 5.13), (5.88, 94.12)),
    "tuned_full": ((86.38, 13.62), (8.82, 91.18)),
}

# Frozen (tp, tn, fp, fn), reconstructed by the count search.
FROZEN_COUNTS = {
    "base_full": (34, 506, 7737, 0),
    "tuned_holdout": (16, 37, 2, 1),
    "tuned_full": (31, 7120, 1123, 3),
}

# Overall metrics in percent: accuracy, balanced accuracy, macro-F1, macro-F2,
# weighted-F1, weighted-F2.
OVERALL = {
    "base_full": (6.52, 53.07, 6.22, 4.86, 11.52, 7.54),
    "tuned_holdout": (94.64, 94.49, 93.77, 94.19, 94.68, 94.65),
    "tuned_full": (86.40, 88.78, 48.95, 50.41, 92.31, 88.48),
}

# Per-class (precision, recall, F1) in percent, keyed by class label.
PER_CLASS = {
    "base_full": {0: (100.00, 6.14, 11.57), 1: (0.44, 100.00, 0.87)},
    "tuned_holdout": {0: (97.37, 94.87, 96.10), 1: (88.89, 94.12, 91.43)},
    "tuned_full": {0: (99.96, 86.38, 92.67), 1: (2.69, 91.18, 5.22)},
}

# Agreement coefficients: observed agreement percent, Cohen's kappa, PABAK,
# Gwet's AC1.
AGREEMENT = {
    "base_full": (6.52, 0.001, -0.870, -0.863),
    "tuned_holdout": (94.64, 0.875, 0.893, 0.906),
    "tuned_full": (86.40, 0.045, 0.728, 0.843),
}

SETTINGS = tuple(SUPPORTS)


def columns_from_counts(tp: int, tn: int, fp: int, fn: int) -> tuple[list[int], list[int]]:
    """Deterministic (human, predicted) label columns realizing the counts."""
    human = [1] * tp + [1] * fn + [0] * tn + [0] * fp
    predicted = [1] * tp + [0] * fn + [0] * tn + [1] * fp
    return human, predicted


def make_corpus(n_exclude: int, n_include: int, prefix: str = "s") -> Corpus:
    """Synthetic corpus with interleaved labels and deterministic content."""
    # Interleave so neither class is a contiguous block.
    interleaved: list[ScreeningLabel] = []
    inc, exc = n_include, n_exclude
    while inc or exc:
        if exc and (not inc or exc * n_include >= inc * n_exclude):
            interleaved.append(ScreeningLabel.EXCLUDE)
            exc -= 1
        else:
            interleaved.append(ScreeningLabel.INCLUDE)
            inc -= 1
    records = []
    for i, label in enumerate(interleaved, start=1):
        records.append(
            StudyRecord(
                id=f"{prefix}{i:05d}",
                title=f"Study {i}: screening effects of intervention {i % 7}",
                abstract=f"Abstract text for study {i}." if i % 11 else "",
                human_label=label,
            )
        )
    return Corpus(records=tuple(records), provenance=Provenance(source="synthetic", ingested_at="fixed"))


@pytest.fixture
def corpus371() -> Corpus:
    """371 records (233 exclude / 138 include), the reference split shape."""
    return make_corpus(n_exclude=233, n_include=138)


_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{_ACCEPTANCE_RESULTS[name]:4s}  {name}")
