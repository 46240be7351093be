"""
RMSE computation and assembly of the evaluation report comparing cold-start
methods across the test sets.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pandas import DataFrame

from .errors import ParameterError
from .types import RatingPair

__all__ = [
    "COMBINED",
    "EvalReport",
    "ReportEntry",
    "SetOutcome",
    "build_report",
    "pooled_identity_holds",
    "rmse",
    "squared_error_sum",
]

COMBINED = "combined"
BASELINES = ("random1", "random2")

SET_LABELS = {
    "test1": "Test set 1",
    "test2": "Test set 2",
    COMBINED: "Test set 1 + Test set 2",
}
METHOD_LABELS = {
    "random1": "Random 1",
    "random2": "Random 2",
    "cnn": "Proposed",
    "oracle": "SVD++",
}


def squared_error_sum(pairs: Iterable[RatingPair]) -> Tuple[float, int]:
    """
    Return the sum of squared differences of (predicted, actual) pairs and
    the number of pairs. The sum is exactly rounded, so it does not depend on
    the order of the pairs.
    """
    data = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    differences = data[:, 0] - data[:, 1]
    return math.fsum((differences * differences).tolist()), len(differences)


def rmse(pairs: Iterable[RatingPair]) -> float:
    """
    Return the root mean squared error of (predicted, actual) pairs.

    Raises:
        ParameterError: There are no pairs.
    """
    total, count = squared_error_sum(pairs)
    if count == 0:
        raise ParameterError("RMSE of an empty list is undefined.")
    return math.sqrt(total / count)


@dataclass(frozen=True)
class SetOutcome:
    """
    Squared-error sums of one method on one review set.

    Attributes:
        sse: Sum of squared errors, one entry per trial. Deterministic methods
            have a single trial.
        n: Number of rated reviews.
        stochastic: Whether the method draws random factors.
    """

    sse: Tuple[float, ...]
    n: int
    stochastic: bool = False

    def __post_init__(self) -> None:
        if not self.sse:
            raise ParameterError("An outcome needs at least one trial.")
        if self.n <= 0:
            raise ParameterError("An outcome needs at least one review.")
        if not self.stochastic and len(self.sse) != 1:
            raise ParameterError("Deterministic outcomes have exactly one trial.")

    @classmethod
    def from_pairs(cls, pairs: Iterable[RatingPair]) -> SetOutcome:
        total, count = squared_error_sum(pairs)
        return cls((total,), count)

    @property
    def rmses(self) -> np.ndarray:
        """Return the RMSE of every trial."""
        return np.sqrt(np.asarray(self.sse) / self.n)


def _pool(outcomes: Sequence[SetOutcome]) -> SetOutcome:
    trials = {len(outcome.sse) for outcome in outcomes}
    kinds = {outcome.stochastic for outcome in outcomes}
    if len(trials) != 1 or len(kinds) != 1:
        raise ParameterError("Only outcomes of the same kind and trial count pool.")
    return SetOutcome(
        sse=tuple(math.fsum(values) for values in zip(*(o.sse for o in outcomes))),
        n=sum(outcome.n for outcome in outcomes),
        stochastic=kinds.pop(),
    )


@dataclass(frozen=True)
class ReportEntry:
    """
    One cell of the report.

    Attributes:
        rmse: RMSE, averaged over trials for stochastic methods.
        variance: Population variance of the trial RMSEs, `None` for
            deterministic methods.
        n_reviews: Number of rated reviews.
    """

    rmse: float
    variance: Optional[float]
    n_reviews: int

    @property
    def stddev(self) -> Optional[float]:
        return None if self.variance is None else math.sqrt(self.variance)


def _entry(outcome: SetOutcome) -> ReportEntry:
    rmses = outcome.rmses
    if not outcome.stochastic:
        return ReportEntry(float(rmses[0]), None, outcome.n)
    return ReportEntry(float(np.mean(rmses)), float(np.var(rmses)), outcome.n)


@dataclass
class EvalReport:
    """
    RMSE of every evaluated method on every test set, the combined column and
    the improvement of every other method over the random baselines.

    Attributes:
        rows: Entries by method and set name.
        improvements: Baseline RMSE minus method RMSE, keyed by method, then
            baseline, then set name.
        metadata: Seeds, configuration and input digests of the run.
    """

    rows: Dict[str, Dict[str, ReportEntry]]
    improvements: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> DataFrame:
        """Return the report as a table with columns method, set, rmse, variance, n."""
        records = [
            {
                "method": method,
                "set": set_name,
                "rmse": entry.rmse,
                "variance": entry.variance,
                "n": entry.n_reviews,
            }
            for method, entries in self.rows.items()
            for set_name, entry in entries.items()
        ]
        return DataFrame(records, columns=["method", "set", "rmse", "variance", "n"])

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": {
                method: {set_name: asdict(entry) for set_name, entry in entries.items()}
                for method, entries in self.rows.items()
            },
            "improvements": self.improvements,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, document: Mapping[str, Any]) -> EvalReport:
        return cls(
            rows={
                method: {
                    name: ReportEntry(**entry) for name, entry in entries.items()
                }
                for method, entries in document["rows"].items()
            },
            improvements={
                method: {baseline: dict(deltas) for baseline, deltas in by_base.items()}
                for method, by_base in document.get("improvements", {}).items()
            },
            metadata=dict(document.get("metadata", {})),
        )

    def to_json(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as stream:
            json.dump(self.to_dict(), stream, indent=2, sort_keys=True)
            stream.write("\n")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> EvalReport:
        with open(path, encoding="utf-8") as stream:
            return cls.from_dict(json.load(stream))

    def set_names(self) -> Sequence[str]:
        names = []
        for entries in self.rows.values():
            names.extend(name for name in entries if name not in names)
        return names

    def format_table(self) -> str:
        """
        Render the report as an aligned text table with one row per method
        and one column per set. Stochastic cells read "mean±variance".
        """
        set_names = self.set_names()
        header = [""] + [SET_LABELS.get(name, name) for name in set_names]
        lines = [header]
        for method, entries in self.rows.items():
            line = [METHOD_LABELS.get(method, method)]
            for name in set_names:
                entry = entries.get(name)
                if entry is None:
                    line.append("")
                elif entry.variance is None:
                    line.append(f"{entry.rmse:.4f}")
                else:
                    line.append(f"{entry.rmse:.4f}±{entry.variance:.1g}")
            lines.append(line)

        widths = [max(len(row[c]) for row in lines) for c in range(len(header))]
        rendered = [
            "  ".join(
                cell.ljust(width) if c == 0 else cell.rjust(width)
                for c, (cell, width) in enumerate(zip(row, widths))
            ).rstrip()
            for row in lines
        ]

        for method, by_baseline in self.improvements.items():
            for baseline, deltas in by_baseline.items():
                described = ", ".join(
                    f"{SET_LABELS.get(name, name)} {delta:+.4f}"
                    for name, delta in deltas.items()
                )
                rendered.append(
                    f"{METHOD_LABELS.get(method, method)} vs "
                    f"{METHOD_LABELS.get(baseline, baseline)}: {described}"
                )
        return "\n".join(rendered)


def _pooled_matches(
    parts: Sequence[SetOutcome], combined: SetOutcome, tolerance: float
) -> bool:
    for trial, pooled_rmse in enumerate(combined.rmses):
        expected = math.fsum(part.rmses[trial] ** 2 * part.n for part in parts)
        if not math.isclose(
            pooled_rmse**2 * combined.n, expected, rel_tol=tolerance, abs_tol=tolerance
        ):
            return False
    return True


def build_report(
    results: Mapping[str, Mapping[str, SetOutcome]],
    metadata: Optional[Mapping[str, Any]] = None,
    *,
    baselines: Sequence[str] = BASELINES,
) -> EvalReport:
    """
    Assemble the evaluation report.

    Arguments:
        results: Outcomes by method and set name. When a method was evaluated
            on more than one set, a combined column is added that pools the
            squared errors over the union of the sets (per trial for
            stochastic methods).
        metadata: Run metadata stored with the report.
        baselines: Methods other methods are compared against.

    Raises:
        ParameterError: No method was evaluated.
    """
    if not results:
        raise ParameterError("At least one method must be evaluated.")

    rows: Dict[str, Dict[str, ReportEntry]] = {}
    for method, outcomes in results.items():
        entries = {name: _entry(outcome) for name, outcome in outcomes.items()}
        if len(outcomes) > 1:
            parts = list(outcomes.values())
            combined = _pool(parts)
            assert _pooled_matches(parts, combined, 1e-9)
            entries[COMBINED] = _entry(combined)
        rows[method] = entries

    improvements: Dict[str, Dict[str, Dict[str, float]]] = {}
    for method, entries in rows.items():
        if method in baselines:
            continue
        for baseline in baselines:
            if baseline not in rows:
                continue
            improvements.setdefault(method, {})[baseline] = {
                name: rows[baseline][name].rmse - entry.rmse
                for name, entry in entries.items()
                if name in rows[baseline]
            }

    return EvalReport(rows, improvements, dict(metadata or {}))


def pooled_identity_holds(report: EvalReport, tolerance: float = 1e-9) -> bool:
    """
    Check RMSE_combined² · Σn = Σ RMSE_set² · n_set on every deterministic row
    of a report that has a combined column.
    """
    for entries in report.rows.values():
        combined = entries.get(COMBINED)
        if combined is None or combined.variance is not None:
            continue
        parts = [entry for name, entry in entries.items() if name != COMBINED]
        expected = math.fsum(entry.rmse**2 * entry.n_reviews for entry in parts)
        if sum(entry.n_reviews for entry in parts) != combined.n_reviews:
            return False
        if not math.isclose(
            combined.rmse**2 * combined.n_reviews,
            expected,
            rel_tol=tolerance,
            abs_tol=tolerance,
        ):
            return False
    return True
