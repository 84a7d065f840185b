"""Chance-corrected inter-rater agreement over binary rating matrices.

All kappa-family statistics share the form (p_o - p_e) / (1 - p_e) and differ
only in the chance-agreement term p_e:

  Cohen's kappa   p_e = sum_k marginal_a(k) * marginal_b(k)   (two raters)
  PABAK           p_e fixed at 1/2, so the estimate is 2*p_o - 1
  Gwet's AC1      p_e = (1/(q-1)) * sum_k pi_k * (1 - pi_k), pi_k the mean
                  category prevalence across raters
  Fleiss' kappa   p_e = sum_k pbar_k^2, pbar_k the pooled proportion of all
                  ratings in category k

Observed agreement p_o uses the pairwise definition
p_o = (1/n) * sum_i sum_k r_ik * (r_ik - 1) / (r * (r - 1)),
which for two raters reduces to the fraction of matching items.

Raters that are constant and identical make p_e = 1; such results carry a
degeneracy flag and the estimate is defined as 1 by convention. Confidence
intervals come from a seeded nonparametric bootstrap over items (percentile
method); degenerate replicates are skipped and counted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import ScreeningLabel
from .errors import ScreenKitError


class AgreementError(ScreenKitError):
    """Raised for malformed rating matrices or unusable bootstrap samples."""


@dataclass(frozen=True)
class RatingMatrix:
    """Complete items x raters matrix of binary labels (no missing cells)."""

    item_ids: tuple[str, ...]
    rater_ids: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise AgreementError(f"rating matrix must be 2-D, got shape {data.shape}")
        n, r = data.shape
        if n < 1:
            raise AgreementError("rating matrix needs at least one item")
        if r < 2:
            raise AgreementError(f"rating matrix needs at least two raters, got {r}")
        if len(self.item_ids) != n or len(self.rater_ids) != r:
            raise AgreementError("item/rater id counts do not match the data shape")
        if not np.isin(data, (0, 1)).all():
            raise AgreementError("all ratings must be binary (0 or 1)")
        object.__setattr__(self, "data", data.astype(np.int64, copy=False))

    @property
    def n_items(self) -> int:
        return self.data.shape[0]

    @property
    def n_raters(self) -> int:
        return self.data.shape[1]

    def column(self, rater_id: str) -> np.ndarray:
        try:
            j = self.rater_ids.index(rater_id)
        except ValueError:
            raise AgreementError(f"unknown rater {rater_id!r}") from None
        return self.data[:, j]

    def take_items(self, indices: np.ndarray) -> "RatingMatrix":
        """Row-resampled copy (item ids may repeat; used by the bootstrap)."""
        return RatingMatrix(
            item_ids=tuple(self.item_ids[i] for i in indices),
            rater_ids=self.rater_ids,
            data=self.data[indices, :],
        )

    @classmethod
    def from_columns(
        cls, columns: Mapping[str, Sequence[int]], item_ids: Sequence[str] | None = None
    ) -> "RatingMatrix":
        names = tuple(columns.keys())
        if len(names) < 2:
            raise AgreementError(f"need at least two rater columns, got {len(names)}")
        arrays = [np.asarray(columns[name], dtype=np.int64) for name in names]
        lengths = {len(a) for a in arrays}
        if len(lengths) != 1:
            raise AgreementError(f"rater columns have differing lengths: {sorted(lengths)}")
        n = lengths.pop()
        ids = tuple(item_ids) if item_ids is not None else tuple(f"item{i}" for i in range(n))
        return cls(item_ids=ids, rater_ids=names, data=np.stack(arrays, axis=1))


@dataclass(frozen=True)
class AgreementResult:
    """A coefficient estimate together with its defining p_o and p_e."""

    statistic: str
    estimate: float
    p_o: float
    p_e: float
    n: int
    r: int
    ci_low: float | None = None
    ci_high: float | None = None
    degenerate: bool = False


def _as_binary_column(values: Sequence[int] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    if arr.ndim != 1:
        raise AgreementError(f"{name} must be one-dimensional")
    if not np.isin(arr, (0, 1)).all():
        raise AgreementError(f"{name} must contain only binary labels")
    return arr


def _check_pair(a: Sequence[int], b: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    ca, cb = _as_binary_column(a, "rater a"), _as_binary_column(b, "rater b")
    if len(ca) != len(cb):
        raise AgreementError(f"rater columns differ in length: {len(ca)} vs {len(cb)}")
    if len(ca) == 0:
        raise AgreementError("rater columns are empty")
    return ca, cb


def observed_agreement(m: RatingMatrix) -> float:
    """Pairwise observed agreement; for two raters, the fraction of matches.

    Computed as one exact integer ratio: the number of agreeing rater pairs
    over n * r * (r - 1) / 2 total pairs (doubled in both terms).
    """
    r = m.n_raters
    ones = m.data.sum(axis=1)
    zeros = r - ones
    numerator = int((ones * (ones - 1) + zeros * (zeros - 1)).sum())
    return numerator / (m.n_items * r * (r - 1))


def _kappa_result(
    statistic: str, po_frac: tuple[int, int], pe_frac: tuple[int, int], n: int, r: int
) -> AgreementResult:
    """Assemble a kappa-family result from exact integer p_o / p_e ratios."""
    p_o = po_frac[0] / po_frac[1]
    p_e = pe_frac[0] / pe_frac[1]
    degenerate = pe_frac[0] == pe_frac[1]
    estimate = 1.0 if degenerate else (p_o - p_e) / (1.0 - p_e)
    return AgreementResult(
        statistic=statistic, estimate=estimate, p_o=p_o, p_e=p_e, n=n, r=r, degenerate=degenerate
    )


def cohen_kappa(a: Sequence[int], b: Sequence[int]) -> AgreementResult:
    """Cohen's kappa between two raters (chance term from marginal products)."""
    ca, cb = _check_pair(a, b)
    n = len(ca)
    n11 = int(((ca == 1) & (cb == 1)).sum())
    n00 = int(((ca == 0) & (cb == 0)).sum())
    a1, b1 = int((ca == 1).sum()), int((cb == 1).sum())
    pe_num = a1 * b1 + (n - a1) * (n - b1)
    return _kappa_result("cohen_kappa", (n11 + n00, n), (pe_num, n * n), n, 2)


def pabak(a: Sequence[int], b: Sequence[int]) -> AgreementResult:
    """Prevalence- and bias-adjusted kappa: exactly 2 * p_o - 1 for binary data."""
    ca, cb = _check_pair(a, b)
    n = len(ca)
    matches = int((ca == cb).sum())
    p_o = matches / n
    return AgreementResult(
        statistic="pabak", estimate=2.0 * p_o - 1.0, p_o=p_o, p_e=0.5, n=n, r=2
    )


def gwet_ac1_multi(m: RatingMatrix) -> AgreementResult:
    """Generalized Gwet's AC1 across all raters of a matrix.

    The chance term uses average category prevalence, so it stays stable
    when one class dominates: pi_k is each category's mean prevalence
    across raters and p_e = (1/(q-1)) * sum_k pi_k * (1 - pi_k).
    """
    n, r = m.n_items, m.n_raters
    ones = int(m.data.sum())
    total = n * r
    pi1 = ones / total
    pi0 = (total - ones) / total
    # q = 2, so the 1/(q-1) factor is 1.
    p_e = pi1 * (1.0 - pi1) + pi0 * (1.0 - pi0)
    p_o = observed_agreement(m)
    estimate = (p_o - p_e) / (1.0 - p_e)
    return AgreementResult(
        statistic="gwet_ac1", estimate=estimate, p_o=p_o, p_e=p_e, n=n, r=r
    )


def gwet_ac1_pairwise(a: Sequence[int], b: Sequence[int]) -> AgreementResult:
    """Gwet's AC1 for two raters; the r=2 case of the generalized form,
    where p_e reduces to 2 * pi * (1 - pi) with pi the mean positive prevalence."""
    ca, cb = _check_pair(a, b)
    m = RatingMatrix.from_columns({"a": ca, "b": cb})
    return gwet_ac1_multi(m)


def fleiss_kappa(m: RatingMatrix) -> AgreementResult:
    """Fleiss' kappa: multi-rater agreement with a pooled-marginal chance term."""
    n, r = m.n_items, m.n_raters
    ones = int(m.data.sum())
    total = n * r
    zeros = total - ones
    po_ones = m.data.sum(axis=1)
    po_zeros = r - po_ones
    po_num = int((po_ones * (po_ones - 1) + po_zeros * (po_zeros - 1)).sum())
    return _kappa_result(
        "fleiss_kappa",
        (po_num, n * r * (r - 1)),
        (ones * ones + zeros * zeros, total * total),
        n,
        r,
    )


@dataclass(frozen=True)
class BootstrapSpec:
    """Item-resampling bootstrap configuration (percentile intervals)."""

    replicates: int = 2000
    seed: int = 0
    confidence: float = 0.95

    def __post_init__(self) -> None:
        if self.replicates < 100:
            raise AgreementError(f"bootstrap needs at least 100 replicates, got {self.replicates}")
        if not 0.0 < self.confidence < 1.0:
            raise AgreementError(f"confidence must be in (0,1), got {self.confidence}")


Statistic = Callable[[RatingMatrix], AgreementResult]


def bootstrap_ci(statistic: Statistic, m: RatingMatrix, spec: BootstrapSpec) -> tuple[float, float]:
    """Percentile bootstrap interval for a statistic over item resamples.

    Replicate b draws its own generator from (seed, b), so results do not
    depend on evaluation order. Degenerate replicates are skipped; if more
    than half degenerate, the interval is refused.
    """
    n = m.n_items
    values: list[float] = []
    skipped = 0
    for b in range(spec.replicates):
        rng = np.random.default_rng((spec.seed, b))
        indices = rng.integers(0, n, size=n)
        result = statistic(m.take_items(indices))
        if result.degenerate:
            skipped += 1
        else:
            values.append(result.estimate)
    if skipped > spec.replicates / 2:
        raise AgreementError(
            f"bootstrap unusable: {skipped}/{spec.replicates} replicates "
            f"({skipped / spec.replicates:.0%}) were degenerate"
        )
    alpha = 1.0 - spec.confidence
    low, high = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(low), float(high)


def with_ci(statistic: Statistic, m: RatingMatrix, spec: BootstrapSpec) -> AgreementResult:
    """Evaluate a statistic on the full matrix and attach its bootstrap CI."""
    base = statistic(m)
    low, high = bootstrap_ci(statistic, m, spec)
    return replace(base, ci_low=low, ci_high=high)


def pairwise_consistency(
    passes: Mapping[str, Sequence[int]],
) -> list[tuple[str, str, AgreementResult]]:
    """Cohen's kappa between every unordered pair of inference passes."""
    names = list(passes.keys())
    if len(names) < 2:
        raise AgreementError(f"need at least two passes for consistency, got {len(names)}")
    out = []
    for i, name_a in enumerate(names):
        for name_b in names[i + 1 :]:
            out.append((name_a, name_b, cohen_kappa(passes[name_a], passes[name_b])))
    return out


def read_rating_matrix(path: str | Path) -> RatingMatrix:
    """Load a wide delimited table: first column item id, one column per rater."""
    path = Path(path)
    if not path.is_file():
        raise AgreementError(f"ratings file not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise AgreementError(f"{path}: empty ratings file") from None
        if len(header) < 3:
            raise AgreementError(f"{path}: need an id column plus at least two rater columns")
        rater_ids = tuple(name.strip() for name in header[1:])
        item_ids: list[str] = []
        rows: list[list[int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise AgreementError(f"{path}: line {lineno}: expected {len(header)} cells")
            item_ids.append(row[0])
            try:
                rows.append([int(ScreeningLabel.parse(cell)) for cell in row[1:]])
            except ValueError as exc:
                raise AgreementError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise AgreementError(f"{path}: no rating rows")
    return RatingMatrix(item_ids=tuple(item_ids), rater_ids=rater_ids, data=np.array(rows))
