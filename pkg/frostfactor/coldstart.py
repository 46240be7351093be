"""
Rating businesses without usage data.

A cold business gets its latent factors from one of several sources: the
description network, one of two random baselines drawing from the range of
trained factors, or the oracle factorisation that saw the business's
ratings. Cold businesses have no usage data to estimate a bias from, so
their item bias is zero for every non-oracle source.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from pandas import DataFrame

from .convnet import CnnModel, predict_factors
from .corpus import Review, ReviewSet
from .errors import NotFoundError, ParameterError
from .evaluation import SetOutcome, squared_error_sum
from .svdpp import MfModel, predict_known, predict_rating
from .textprep import TokenizedDoc
from .types import FactorVector

__all__ = [
    "FactorBounds",
    "FactorSource",
    "SourceKind",
    "TrialResult",
    "compute_bounds",
    "random1_factors",
    "random2_factors",
    "rate_test_set",
    "run_baseline_trials",
    "set_outcome",
]

logger = logging.getLogger(__name__)


class SourceKind(str, Enum):
    CNN = "cnn"
    RANDOM1 = "random1"
    RANDOM2 = "random2"
    ORACLE = "oracle"

    @property
    def stochastic(self) -> bool:
        return self in (SourceKind.RANDOM1, SourceKind.RANDOM2)


@dataclass(frozen=True, eq=False)
class FactorBounds:
    """
    Range of the item factors of a trained model.

    Attributes:
        global_min, global_max: Extrema over all factors of all items.
        col_min, col_max: Extrema of every factor over all items.
    """

    global_min: float
    global_max: float
    col_min: FactorVector
    col_max: FactorVector

    def __post_init__(self) -> None:
        values = np.concatenate(
            [[self.global_min, self.global_max], self.col_min, self.col_max]
        )
        assert np.isfinite(values).all()
        assert self.col_min.shape == self.col_max.shape
        assert self.global_min <= self.col_min.min()
        assert self.col_max.max() <= self.global_max
        assert (self.col_min <= self.col_max).all()

    @property
    def k(self) -> int:
        return len(self.col_min)


def compute_bounds(model: MfModel) -> FactorBounds:
    """
    Return the extrema of the trained item factors q_i.

    Raises:
        ParameterError: The model has no items.
    """
    factors = model.item_factors
    if len(factors) == 0:
        raise ParameterError("Factor bounds need at least one trained item.")
    return FactorBounds(
        global_min=float(factors.min()),
        global_max=float(factors.max()),
        col_min=factors.min(axis=0),
        col_max=factors.max(axis=0),
    )


def random1_factors(bounds: FactorBounds, rng: np.random.Generator) -> FactorVector:
    """Draw every factor uniformly from the global range."""
    return rng.uniform(bounds.global_min, bounds.global_max, size=bounds.k)


def random2_factors(bounds: FactorBounds, rng: np.random.Generator) -> FactorVector:
    """Draw every factor uniformly from the range of its own column."""
    return rng.uniform(bounds.col_min, bounds.col_max, size=bounds.k)


@dataclass(frozen=True)
class FactorSource:
    """
    Where the factors of cold businesses come from. Use the named
    constructors; each kind carries exactly its own payload.
    """

    kind: SourceKind
    network: Optional[CnnModel] = None
    bounds: Optional[FactorBounds] = None
    oracle: Optional[MfModel] = None

    def __post_init__(self) -> None:
        present = {
            "network": self.network is not None,
            "bounds": self.bounds is not None,
            "oracle": self.oracle is not None,
        }
        required = {
            SourceKind.CNN: "network",
            SourceKind.RANDOM1: "bounds",
            SourceKind.RANDOM2: "bounds",
            SourceKind.ORACLE: "oracle",
        }[self.kind]
        if [name for name, given in present.items() if given] != [required]:
            raise ParameterError(
                f"A {self.kind.value} source needs only its {required}."
            )

    @classmethod
    def cnn(cls, network: CnnModel) -> FactorSource:
        return cls(SourceKind.CNN, network=network)

    @classmethod
    def random(cls, kind: SourceKind, bounds: FactorBounds) -> FactorSource:
        if not kind.stochastic:
            raise ParameterError(f"‘{kind.value}’ is not a random baseline.")
        return cls(kind, bounds=bounds)

    @classmethod
    def upper_bound(cls, oracle: MfModel) -> FactorSource:
        return cls(SourceKind.ORACLE, oracle=oracle)


def _require(
    business_ids: List[str], available: Mapping[str, object], what: str
) -> None:
    missing = [name for name in business_ids if name not in available]
    if missing:
        raise NotFoundError(f"No {what} for business(es): {', '.join(missing)}")


def rate_test_set(
    test: ReviewSet,
    mf: MfModel,
    source: FactorSource,
    descriptions: Mapping[str, TokenizedDoc],
    rng: np.random.Generator,
) -> List[Tuple[Review, float]]:
    """
    Predict the rating of every review of a test set.

    Factors are obtained once per business, in order of first appearance
    in the test set, and shared by all of its reviews.

    Arguments:
        test: Reviews of businesses unseen by `mf`.
        mf: Model trained without the test businesses; provides the user
            side of every non-oracle prediction.
        source: Source of the business factors.
        descriptions: Prepared description of every business; used by the
            network source only.
        rng: Generator of the random baselines.

    Returns:
        Every review paired with its predicted rating, in test set order.

    Raises:
        NotFoundError: Descriptions or oracle factors are missing; all
            affected businesses are listed.
    """
    business_ids = list(test.business_ids)

    if source.kind is SourceKind.ORACLE:
        assert source.oracle is not None
        oracle = source.oracle
        _require(
            business_ids,
            {item_id: None for item_id in oracle.item_ids},
            "oracle factors",
        )
        return [
            (review, predict_known(oracle, review.user_id, review.business_id))
            for review in test
        ]

    factors: Dict[str, FactorVector] = {}
    if source.kind is SourceKind.CNN:
        assert source.network is not None
        _require(business_ids, descriptions, "description")
        for business_id in business_ids:
            factors[business_id] = predict_factors(
                source.network, descriptions[business_id]
            )
    else:
        assert source.bounds is not None
        draw = random1_factors if source.kind is SourceKind.RANDOM1 else random2_factors
        for business_id in business_ids:
            factors[business_id] = draw(source.bounds, rng)

    return [
        (review, predict_rating(mf, review.user_id, factors[review.business_id]))
        for review in test
    ]


def set_outcome(rated: List[Tuple[Review, float]]) -> SetOutcome:
    """Return the squared-error sum of rated reviews."""
    return SetOutcome.from_pairs(
        [(predicted, review.stars) for review, predicted in rated]
    )


@dataclass(frozen=True)
class TrialResult:
    """
    Errors of repeated runs of a random baseline on one review set.

    Attributes:
        kind: The baseline.
        sse: Sum of squared errors of every trial, in trial order.
        n: Number of reviews rated in every trial.
    """

    kind: SourceKind
    sse: Tuple[float, ...]
    n: int

    @property
    def rmses(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.sse) / self.n)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rmses))

    @property
    def variance(self) -> float:
        """Population variance of the trial RMSEs."""
        return float(np.var(self.rmses))

    def outcome(self) -> SetOutcome:
        return SetOutcome(self.sse, self.n, stochastic=True)

    def to_frame(self) -> DataFrame:
        """Return the trial RMSEs with columns trial, rmse."""
        return DataFrame(
            {"trial": np.arange(1, len(self.sse) + 1), "rmse": self.rmses},
            columns=["trial", "rmse"],
        )


def run_baseline_trials(
    test: ReviewSet,
    mf: MfModel,
    kind: SourceKind,
    n_runs: int = 100,
    seed: int = 0,
    bounds: Optional[FactorBounds] = None,
    *,
    stream: Optional[int] = None,
) -> TrialResult:
    """
    Rate a test set `n_runs` times with a random baseline.

    Trial t draws from a generator seeded with the t-th child of
    `numpy.random.SeedSequence(seed)`, so every trial can be reproduced on
    its own. With `stream` set, the trials are children of the `stream`-th
    child instead; review sets rated with distinct streams get independent
    draws.

    Arguments:
        bounds: Factor ranges; computed from `mf` when omitted.
        stream: Index of the seed child the trials descend from.

    Raises:
        ParameterError: `n_runs` is below 1 or the test set is empty.
    """
    if n_runs < 1:
        raise ParameterError("At least one run is needed.")
    if len(test) == 0:
        raise ParameterError("Cannot run baselines on an empty test set.")

    source = FactorSource.random(SourceKind(kind), bounds or compute_bounds(mf))
    if stream is None:
        root = np.random.SeedSequence(seed)
    else:
        root = np.random.SeedSequence(seed, spawn_key=(stream,))
    sse = []
    for child in root.spawn(n_runs):
        rated = rate_test_set(test, mf, source, {}, np.random.default_rng(child))
        total, _ = squared_error_sum(
            (predicted, review.stars) for review, predicted in rated
        )
        sse.append(total)

    result = TrialResult(source.kind, tuple(sse), len(test))
    logger.info(
        "%s over %d run(s): RMSE %.4f, variance %.2g",
        source.kind.value,
        n_runs,
        result.mean,
        result.variance,
    )
    assert math.isfinite(result.mean)
    return result
