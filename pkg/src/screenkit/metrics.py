"""Binary classification metrics over screening decisions (include = positive).

Everything derives from integer confusion counts. Metrics that would divide
by zero are reported as explicit None ("undefined") rather than silently 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .corpus import ScreeningLabel
from .errors import ScreenKitError


class MetricsError(ScreenKitError):
    """Raised for empty inputs or invalid confusion counts."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """TP/TN/FP/FN counts; the root of every classification metric here."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise MetricsError(f"{name} must be a nonnegative integer, got {value!r}")
        if self.total == 0:
            raise MetricsError("confusion matrix must count at least one item")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def support_positive(self) -> int:
        return self.tp + self.fn

    @property
    def support_negative(self) -> int:
        return self.tn + self.fp

    @property
    def predicted_positive(self) -> int:
        return self.tp + self.fp

    @property
    def predicted_negative(self) -> int:
        return self.tn + self.fn


def build_confusion(
    pairs: Iterable[tuple[ScreeningLabel | int, ScreeningLabel | int]],
) -> ConfusionMatrix:
    """Count (human, predicted) pairs into a confusion matrix."""
    tp = tn = fp = fn = 0
    for human, predicted in pairs:
        h, p = int(human), int(predicted)
        if h not in (0, 1) or p not in (0, 1):
            raise MetricsError(f"labels must be binary, got ({human!r}, {predicted!r})")
        if h == 1 and p == 1:
            tp += 1
        elif h == 0 and p == 0:
            tn += 1
        elif h == 0 and p == 1:
            fp += 1
        else:
            fn += 1
    if tp + tn + fp + fn == 0:
        raise MetricsError("cannot build a confusion matrix from zero pairs")
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class precision/recall/F-scores; None marks an undefined value."""

    label: ScreeningLabel
    support: int
    precision: float | None
    recall: float | None
    f1: float | None
    f_beta: float | None
    beta: float

    @property
    def undefined(self) -> bool:
        return None in (self.precision, self.recall, self.f1, self.f_beta)


def _fbeta(precision: float | None, recall: float | None, beta: float) -> float | None:
    if precision is None or recall is None:
        return None
    if precision == 0.0 and recall == 0.0:
        return 0.0
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


def per_class_metrics(cm: ConfusionMatrix, beta: float = 1.0) -> tuple[ClassMetrics, ClassMetrics]:
    """Precision, recall, F1, and F_beta for (exclude, include), in that order.

    F_beta = (1 + beta^2) * P * R / (beta^2 * P + R), with F_beta = 0 at P = R = 0.
    A class with zero support (or zero predictions, for precision) yields None.
    """
    if beta <= 0:
        raise MetricsError(f"beta must be positive, got {beta}")

    def ratio(num: int, den: int) -> float | None:
        return num / den if den else None

    p1 = ratio(cm.tp, cm.predicted_positive)
    r1 = ratio(cm.tp, cm.support_positive)
    p0 = ratio(cm.tn, cm.predicted_negative)
    r0 = ratio(cm.tn, cm.support_negative)

    exclude = ClassMetrics(
        label=ScreeningLabel.EXCLUDE,
        support=cm.support_negative,
        precision=p0,
        recall=r0,
        f1=_fbeta(p0, r0, 1.0),
        f_beta=_fbeta(p0, r0, beta),
        beta=beta,
    )
    include = ClassMetrics(
        label=ScreeningLabel.INCLUDE,
        support=cm.support_positive,
        precision=p1,
        recall=r1,
        f1=_fbeta(p1, r1, 1.0),
        f_beta=_fbeta(p1, r1, beta),
        beta=beta,
    )
    return exclude, include


@dataclass(frozen=True)
class AggregateMetrics:
    accuracy: float
    balanced_accuracy: float | None
    macro_f1: float | None
    macro_f2: float | None
    weighted_f1: float | None
    weighted_f2: float | None


def aggregate(cm: ConfusionMatrix) -> AggregateMetrics:
    """Accuracy plus macro/support-weighted F1 and F2 and balanced accuracy.

    Balanced accuracy is the unweighted mean of the two class recalls; macro
    averages weight classes equally, weighted averages weight by support.
    """
    exclude, include = per_class_metrics(cm, beta=2.0)

    def mean2(a: float | None, b: float | None) -> float | None:
        if a is None or b is None:
            return None
        return (a + b) / 2.0

    def weighted(a: float | None, b: float | None) -> float | None:
        if a is None or b is None:
            return None
        return (exclude.support * a + include.support * b) / cm.total

    return AggregateMetrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        balanced_accuracy=mean2(exclude.recall, include.recall),
        macro_f1=mean2(exclude.f1, include.f1),
        macro_f2=mean2(exclude.f_beta, include.f_beta),
        weighted_f1=weighted(exclude.f1, include.f1),
        weighted_f2=weighted(exclude.f_beta, include.f_beta),
    )


@dataclass(frozen=True)
class ConfusionPercentages:
    """Row-normalized confusion cells in percent; rows sum to 100 (pre-rounding).

    None cells mark a true class with zero support.
    """

    true0_pred0: float | None
    true0_pred1: float | None
    true1_pred0: float | None
    true1_pred1: float | None


def row_normalize(cm: ConfusionMatrix) -> ConfusionPercentages:
    """Normalize each true-class row of the confusion matrix to percentages."""

    def pct(num: int, den: int) -> float | None:
        return 100.0 * num / den if den else None

    return ConfusionPercentages(
        true0_pred0=pct(cm.tn, cm.support_negative),
        true0_pred1=pct(cm.fp, cm.support_negative),
        true1_pred0=pct(cm.fn, cm.support_positive),
        true1_pred1=pct(cm.tp, cm.support_positive),
    )


def percent_str(fraction: float | None, decimals: int = 2) -> str:
    """Render a fraction as a percentage, rounding halves away from zero."""
    if fraction is None:
        return "undefined"
    return decimal_str(100.0 * fraction, decimals)


def decimal_str(value: float | None, decimals: int = 3) -> str:
    """Fixed-point rendering with half-away-from-zero rounding."""
    if value is None:
        return "undefined"
    quantum = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def confusion_from_columns(
    human: Sequence[ScreeningLabel | int], predicted: Sequence[ScreeningLabel | int]
) -> ConfusionMatrix:
    if len(human) != len(predicted):
        raise MetricsError(f"column lengths differ: {len(human)} vs {len(predicted)}")
    return build_confusion(zip(human, predicted))
