"""
Review corpus ingestion, description selection, cold-start splits and
review distribution statistics.
"""
from __future__ import annotations

import datetime
import json
import logging
import math
from collections import defaultdict
from dataclasses import astuple, dataclass
from pathlib import Path
from types import MappingProxyType
from typing import (
    Any,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from pandas import DataFrame

from .errors import CorpusFormatError, InputError, NotFoundError, ParameterError

__all__ = [
    "CorpusSummary",
    "FieldNames",
    "SPLIT_PARTS",
    "Review",
    "ReviewSet",
    "Split",
    "count_votes",
    "dump_reviews",
    "load_reviews",
    "rank_businesses",
    "read_split",
    "review_distribution",
    "select_description",
    "select_descriptions",
    "split_dataset",
    "summarize",
    "write_split",
]

logger = logging.getLogger(__name__)

SPLIT_PARTS = ("train", "test1", "test2")


@dataclass(frozen=True)
class Review:
    """
    A single rating of a business by a user, together with the review text.

    Attributes:
        user_id: Opaque identifier of the reviewing user.
        business_id: Opaque identifier of the reviewed business.
        stars: Rating in the range [1, 5].
        votes: Total number of votes the review received from other users.
        text: Review text.
        date: Date the review was written.
    """

    user_id: str
    business_id: str
    stars: float
    votes: int
    text: str
    date: datetime.date

    def __post_init__(self) -> None:
        if not self.user_id or not self.business_id:
            raise ParameterError("Review user and business identifiers must be set.")
        if not 1 <= self.stars <= 5:
            raise ParameterError(f"Rating {self.stars} is outside the range [1, 5].")
        if self.votes < 0:
            raise ParameterError(f"Vote count {self.votes} is negative.")


@dataclass(frozen=True)
class FieldNames:
    """Names of the JSON fields a review record is read from."""

    user_id: str = "user_id"
    business_id: str = "business_id"
    stars: str = "stars"
    votes: str = "votes"
    text: str = "text"
    date: str = "date"


class ReviewSet:
    """
    An immutable, ordered collection of reviews indexed by business and user.
    """

    def __init__(
        self,
        reviews: Iterable[Review],
        *,
        origin: Optional[Sequence[int]] = None,
        skipped: int = 0,
    ) -> None:
        """
        Arguments:
            reviews: Reviews in their canonical (file) order.
            origin: Zero-based line index in the source file of each review.
                Defaults to the position of the review in `reviews`.
            skipped: Number of malformed source lines that were skipped.
        """
        self._reviews: Tuple[Review, ...] = tuple(reviews)
        self._origin: Tuple[int, ...] = (
            tuple(origin) if origin is not None else tuple(range(len(self._reviews)))
        )
        if len(self._origin) != len(self._reviews):
            raise ParameterError("Every review needs exactly one origin line index.")

        by_business: Dict[str, List[int]] = defaultdict(list)
        by_user: Dict[str, List[int]] = defaultdict(list)
        for position, review in enumerate(self._reviews):
            by_business[review.business_id].append(position)
            by_user[review.user_id].append(position)

        self._by_business = MappingProxyType(
            {key: tuple(value) for key, value in by_business.items()}
        )
        self._by_user = MappingProxyType(
            {key: tuple(value) for key, value in by_user.items()}
        )
        self._skipped = skipped

    def __len__(self) -> int:
        return len(self._reviews)

    def __iter__(self) -> Iterator[Review]:
        return iter(self._reviews)

    def __getitem__(self, position: int) -> Review:
        return self._reviews[position]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ReviewSet):
            return NotImplemented
        return self._reviews == other._reviews

    def __repr__(self) -> str:
        return (
            f"ReviewSet({len(self)} reviews, {self.num_users} users, "
            f"{self.num_businesses} businesses)"
        )

    @property
    def reviews(self) -> Tuple[Review, ...]:
        return self._reviews

    @property
    def origin(self) -> Tuple[int, ...]:
        """Return the source line index of each review."""
        return self._origin

    @property
    def by_business(self) -> Mapping[str, Tuple[int, ...]]:
        """Return review positions keyed by business, in first-seen order."""
        return self._by_business

    @property
    def by_user(self) -> Mapping[str, Tuple[int, ...]]:
        """Return review positions keyed by user, in first-seen order."""
        return self._by_user

    @property
    def business_ids(self) -> Tuple[str, ...]:
        return tuple(self._by_business)

    @property
    def user_ids(self) -> Tuple[str, ...]:
        return tuple(self._by_user)

    @property
    def num_businesses(self) -> int:
        return len(self._by_business)

    @property
    def num_users(self) -> int:
        return len(self._by_user)

    @property
    def skipped(self) -> int:
        """Return the number of malformed lines skipped while loading."""
        return self._skipped

    def reviews_of(self, business_id: str) -> Tuple[Review, ...]:
        """Return all reviews of a business in corpus order."""
        return tuple(self._reviews[p] for p in self._by_business.get(business_id, ()))

    def subset(self, positions: Iterable[int]) -> ReviewSet:
        """
        Return a new set with the reviews at the given positions, keeping their
        origin line indexes.
        """
        positions = list(positions)
        return ReviewSet(
            (self._reviews[p] for p in positions),
            origin=[self._origin[p] for p in positions],
        )


@dataclass(frozen=True)
class CorpusSummary:
    """Size statistics of a review set."""

    num_reviews: int
    num_users: int
    num_businesses: int

    @property
    def density(self) -> float:
        """Return the share of the user × business rating matrix that is known."""
        cells = self.num_users * self.num_businesses
        return self.num_reviews / cells if cells else 0.0


def summarize(reviews: ReviewSet) -> CorpusSummary:
    return CorpusSummary(len(reviews), reviews.num_users, reviews.num_businesses)


def count_votes(value: Any, categories: Optional[Sequence[str]] = None) -> int:
    """
    Aggregate the vote record of a review into a single count.

    Arguments:
        value: Either a plain integer or a mapping of named vote categories
            (e.g. useful/funny/cool) to counts.
        categories: Categories to add up. All categories are summed if `None`.
            Missing categories count as zero.

    Returns:
        The total number of votes.
    """
    if isinstance(value, Mapping):
        names = list(value) if categories is None else list(categories)
        return sum(_vote_count(value.get(name, 0)) for name in names)
    return _vote_count(value)


def _vote_count(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"vote count {value!r} is not a number")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"vote count {value!r} is not a whole number")
    return int(value)


def _parse_review(
    line: str, fields: FieldNames, categories: Optional[Sequence[str]]
) -> Review:
    record = json.loads(line)
    if not isinstance(record, dict):
        raise ValueError("expected a JSON object")

    missing = [name for name in astuple(fields) if name not in record]
    if missing:
        raise ValueError(f"missing field(s) {', '.join(missing)}")

    return Review(
        user_id=str(record[fields.user_id]),
        business_id=str(record[fields.business_id]),
        stars=float(record[fields.stars]),
        votes=count_votes(record[fields.votes], categories),
        text=str(record[fields.text]),
        # Timestamps are accepted as well; only the calendar date is kept.
        date=datetime.date.fromisoformat(str(record[fields.date])[:10]),
    )


def load_reviews(
    path: Union[str, Path],
    *,
    strict: bool = True,
    fields: FieldNames = FieldNames(),
    vote_categories: Optional[Sequence[str]] = None,
) -> ReviewSet:
    """
    Load a JSON-lines review file.

    Arguments:
        path: File with one JSON review object per line. Blank lines are ignored.
        strict: Raise on the first malformed line if true, otherwise skip
            malformed lines and record their number in `ReviewSet.skipped`.
        fields: Names of the record fields to read.
        vote_categories: Vote categories summed into `Review.votes`; all of them
            if `None`.

    Raises:
        OSError: The file cannot be read.
        CorpusFormatError: A line is malformed and `strict` is set.
    """
    reviews: List[Review] = []
    origin: List[int] = []
    skipped = 0

    with open(path, "rb") as stream:
        for index, raw in enumerate(stream):
            if not raw.strip():
                continue
            try:
                line = raw.decode("utf-8")
                review = _parse_review(line, fields, vote_categories)
            except (ValueError, TypeError) as error:
                if strict:
                    raise CorpusFormatError(index + 1, str(error)) from error
                skipped += 1
                continue
            reviews.append(review)
            origin.append(index)

    if skipped:
        logger.warning("Skipped %d malformed line(s) in ‘%s’", skipped, path)

    result = ReviewSet(reviews, origin=origin, skipped=skipped)
    logger.info(
        "Loaded %d reviews by %d users of %d businesses from ‘%s’",
        len(result),
        result.num_users,
        result.num_businesses,
        path,
    )
    return result


def dump_reviews(
    reviews: Iterable[Review],
    path: Union[str, Path],
    *,
    fields: FieldNames = FieldNames(),
) -> None:
    """Write reviews as JSON lines readable by `load_reviews`."""
    with open(path, "w", encoding="utf-8") as stream:
        for review in reviews:
            record = {
                fields.user_id: review.user_id,
                fields.business_id: review.business_id,
                fields.stars: review.stars,
                fields.votes: review.votes,
                fields.text: review.text,
                fields.date: review.date.isoformat(),
            }
            stream.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            stream.write("\n")


def _description_rank(review: Review) -> Tuple[int, datetime.date, str]:
    return (-review.votes, review.date, review.user_id)


def select_description(business_id: str, reviews: ReviewSet) -> Review:
    """
    Return the review that serves as the description of a business: the one
    with the most votes, the earliest one among equally voted reviews and then
    the one by the lexicographically smallest user.

    Raises:
        NotFoundError: The business has no review in the set.
    """
    positions = reviews.by_business.get(business_id)
    if not positions:
        raise NotFoundError(f"Business ‘{business_id}’ has no reviews.")
    return min((reviews[p] for p in positions), key=_description_rank)


def select_descriptions(reviews: ReviewSet) -> Dict[str, Review]:
    """Return the description review of every business in the set."""
    return {
        business_id: select_description(business_id, reviews)
        for business_id in reviews.by_business
    }


@dataclass(frozen=True)
class Split:
    """
    Training set and the two business-disjoint cold-start test sets.
    """

    train: ReviewSet
    test1: ReviewSet
    test2: ReviewSet

    def __post_init__(self) -> None:
        train = set(self.train.business_ids)
        test1 = set(self.test1.business_ids)
        test2 = set(self.test2.business_ids)
        if train & (test1 | test2) or test1 & test2:
            raise ParameterError("Split parts must not share any business.")

    def parts(self) -> Dict[str, ReviewSet]:
        return {"train": self.train, "test1": self.test1, "test2": self.test2}


def rank_businesses(reviews: ReviewSet) -> List[str]:
    """
    Return business identifiers by descending review count. Businesses with
    the same count are ordered by identifier.
    """
    return sorted(
        reviews.by_business,
        key=lambda business_id: (-len(reviews.by_business[business_id]), business_id),
    )


def _portion(count: int, fraction: float) -> int:
    # Tolerate representation error, e.g. 100 * 0.15 == 15.000000000000002.
    return math.floor(count * fraction + 1e-9)


def split_dataset(
    reviews: ReviewSet,
    test1_frac: float = 0.15,
    test2_band: Tuple[float, float] = (0.05, 0.10),
    min_votes: int = 5,
) -> Split:
    """
    Split a corpus into a training set and two cold-start test sets.

    Businesses are ranked by review count, most reviewed first. Test set 1
    holds the reviews of the last `test1_frac` of the ranking, test set 2 the
    reviews of the businesses ranked in the band `test2_band` counted from the
    top. Only businesses with at least one review having `min_votes` or more
    votes qualify for a test set; every other review goes to training.

    Arguments:
        reviews: The whole corpus.
        test1_frac: Fraction of least reviewed businesses for test set 1.
        test2_band: Lower and upper fraction (exclusive, inclusive) of the
            ranking for test set 2.
        min_votes: Vote threshold a business needs to qualify.

    Raises:
        ParameterError: The corpus is empty, a fraction is outside (0, 1) or
            the test bands overlap.
    """
    if len(reviews) == 0:
        raise ParameterError("Cannot split an empty review set.")

    band_low, band_high = test2_band
    if not 0 < test1_frac < 1:
        raise ParameterError(f"test1_frac {test1_frac} is outside (0, 1).")
    if not 0 < band_low < band_high < 1:
        raise ParameterError(
            f"test2_band {test2_band} must be an increasing pair inside (0, 1)."
        )
    if band_high + test1_frac > 1:
        raise ParameterError("The test set 1 and test set 2 bands overlap.")
    if min_votes < 0:
        raise ParameterError(f"min_votes {min_votes} is negative.")

    ranking = rank_businesses(reviews)
    count = len(ranking)
    bottom = ranking[count - _portion(count, test1_frac) :]
    band = ranking[_portion(count, band_low) : _portion(count, band_high)]

    def qualifies(business_id: str) -> bool:
        return any(
            reviews[p].votes >= min_votes for p in reviews.by_business[business_id]
        )

    test1_ids = {business_id for business_id in bottom if qualifies(business_id)}
    test2_ids = {business_id for business_id in band if qualifies(business_id)}

    positions: Dict[str, List[int]] = {part: [] for part in SPLIT_PARTS}
    for position, review in enumerate(reviews):
        if review.business_id in test1_ids:
            positions["test1"].append(position)
        elif review.business_id in test2_ids:
            positions["test2"].append(position)
        else:
            positions["train"].append(position)

    split = Split(**{part: reviews.subset(positions[part]) for part in SPLIT_PARTS})
    logger.info(
        "Split %d reviews into %d training, %d test 1 and %d test 2 reviews",
        len(reviews),
        len(split.train),
        len(split.test1),
        len(split.test2),
    )
    return split


def review_distribution(reviews: ReviewSet, axis: str) -> DataFrame:
    """
    Return the number of reviews per user or per business.

    Arguments:
        reviews: The review set.
        axis: Either "user" or "business".

    Returns:
        Table with columns `entity_id` and `count`, sorted by descending count
            and then by identifier.
    """
    if axis == "user":
        index = reviews.by_user
    elif axis == "business":
        index = reviews.by_business
    else:
        raise ParameterError(f"Unknown distribution axis ‘{axis}’.")

    rows = sorted(
        ((entity_id, len(positions)) for entity_id, positions in index.items()),
        key=lambda row: (-row[1], row[0]),
    )
    return DataFrame(rows, columns=["entity_id", "count"])


def write_split(
    split: Split,
    directory: Union[str, Path],
    *,
    fmt: str = "lines",
    fields: FieldNames = FieldNames(),
) -> Dict[str, Path]:
    """
    Write split manifests, one file per part.

    Arguments:
        split: The split to persist.
        directory: Destination directory, created if needed.
        fmt: "lines" writes the source line index of every review, one per line
            (`<part>.idx`); "jsonl" writes the reviews themselves
            (`<part>.jsonl`).
        fields: Field names used by the "jsonl" format.

    Returns:
        Paths of the written files by part name.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    written = {}
    for part, reviews in split.parts().items():
        if fmt == "lines":
            path = directory / f"{part}.idx"
            path.write_text(
                "".join(f"{index}\n" for index in reviews.origin), encoding="utf-8"
            )
        elif fmt == "jsonl":
            path = directory / f"{part}.jsonl"
            dump_reviews(reviews, path, fields=fields)
        else:
            raise ParameterError(f"Unknown split format ‘{fmt}’.")
        written[part] = path
    return written


def read_split(
    directory: Union[str, Path],
    corpus: Optional[ReviewSet] = None,
    *,
    fmt: str = "lines",
    fields: FieldNames = FieldNames(),
) -> Split:
    """
    Read split manifests written by `write_split`.

    Arguments:
        directory: Directory holding the manifests.
        corpus: The corpus the line indexes refer to. Required for "lines".
        fmt: Manifest format, "lines" or "jsonl".
        fields: Field names used by the "jsonl" format.
    """
    directory = Path(directory)
    parts: Dict[str, ReviewSet] = {}

    if fmt == "lines":
        if corpus is None:
            raise ParameterError("Reading line-index manifests needs the corpus.")
        position_of = {line: position for position, line in enumerate(corpus.origin)}
        for part in SPLIT_PARTS:
            path = directory / f"{part}.idx"
            lines = path.read_text(encoding="utf-8").split()
            try:
                parts[part] = corpus.subset(position_of[int(line)] for line in lines)
            except (KeyError, ValueError) as error:
                raise InputError(
                    f"‘{path}’ does not match the review corpus: {error}"
                ) from error
    elif fmt == "jsonl":
        for part in SPLIT_PARTS:
            parts[part] = load_reviews(directory / f"{part}.jsonl", fields=fields)
    else:
        raise ParameterError(f"Unknown split format ‘{fmt}’.")

    return Split(**parts)
