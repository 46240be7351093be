"""
A synthetic review corpus whose business descriptions reveal how users rate
the businesses.

Every business has one of a few cuisines. Ratings follow a latent factor
model in which all businesses of a cuisine share their factors, and every
review mentions words typical of the business's cuisine. A matching word
vector file places the words of a cuisine close together. The corpus is
small enough for the whole pipeline to run in seconds.
"""
from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .corpus import Review, dump_reviews
from .errors import ParameterError

__all__ = ["SyntheticCorpus", "SyntheticSettings", "generate_corpus", "write_corpus"]

logger = logging.getLogger(__name__)

CUISINE_WORDS = (
    ("sushi", "ramen", "noodle", "tempura", "miso", "sake", "wasabi", "udon"),
    ("burger", "fries", "steak", "grill", "bacon", "ribs", "brisket", "cheddar"),
    ("espresso", "latte", "pastry", "croissant", "muffin", "bagel", "scone", "mocha"),
    ("salsa", "taco", "burrito", "nachos", "tortilla", "guacamole", "churro", "queso"),
)

# fmt: off
FILLER_WORDS = (
    "the", "a", "great", "place", "food", "service", "friendly", "staff", "nice",
    "visit", "again", "really", "good", "time", "we", "our", "went", "with",
    "and", "was", "very", "menu", "table", "waiter", "price", "lunch", "dinner",
    "weekend", "parking", "downtown",
)
# fmt: on

# Misspelled words within two edits of a vocabulary word.
MISSPELLINGS = {
    "sushi": "sushii",
    "burger": "burgr",
    "espresso": "expresso",
    "taco": "tacco",
}

UNKNOWN_WORDS = ("zqxv", "blorptastic", "flumwhistle")

_FIRST_DATE = datetime.date(2010, 1, 1)


@dataclass(frozen=True)
class SyntheticSettings:
    """
    Attributes:
        n_businesses: Number of businesses.
        n_users: Number of users.
        rank: Number of latent factors the ratings are generated from.
        dim: Dimensionality of the word vectors.
        min_reviews, max_reviews: Range of review counts per business.
        words_per_review: Number of words in a review text.
        noise: Standard deviation of rating noise before rounding.
        seed: Seed of the generator.
    """

    n_businesses: int = 100
    n_users: int = 150
    rank: int = 3
    dim: int = 8
    min_reviews: int = 6
    max_reviews: int = 30
    words_per_review: int = 14
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.min_reviews <= self.max_reviews <= self.n_users:
            raise ParameterError(
                "Review counts must satisfy 1 ≤ min_reviews ≤ max_reviews ≤ n_users."
            )
        if self.n_businesses < 1 or self.rank < 1 or self.dim < 1:
            raise ParameterError("Sizes of the synthetic corpus must be positive.")


@dataclass
class SyntheticCorpus:
    """
    Attributes:
        reviews: Reviews in chronological order.
        vectors: Word vector of every vocabulary word, misspellings and
            unknown words excluded.
        cuisines: Cuisine index of every business.
        item_bias: True bias of every business.
    """

    reviews: List[Review]
    vectors: Dict[str, np.ndarray]
    cuisines: Dict[str, int]
    item_bias: Dict[str, float]


def _review_text(cuisine: int, length: int, rng: np.random.Generator) -> str:
    words = []
    for position in range(length):
        if position % 2 == 0:
            word = str(rng.choice(CUISINE_WORDS[cuisine]))
            if word in MISSPELLINGS and rng.random() < 0.2:
                word = MISSPELLINGS[word]
        else:
            word = str(rng.choice(FILLER_WORDS))
        words.append(word)
    if rng.random() < 0.1:
        words.append(str(rng.choice(UNKNOWN_WORDS)))
    return " ".join(words).capitalize() + "."


def generate_corpus(
    settings: SyntheticSettings = SyntheticSettings(),
) -> SyntheticCorpus:
    """Generate a corpus; identical settings give identical corpora."""
    rng = np.random.default_rng(settings.seed)
    num_cuisines = len(CUISINE_WORDS)

    cuisine_factors = rng.normal(0.0, 1.0, size=(num_cuisines, settings.rank))
    user_factors = rng.normal(0.0, 0.7, size=(settings.n_users, settings.rank))
    user_bias = rng.normal(0.0, 0.3, size=settings.n_users)

    vectors: Dict[str, np.ndarray] = {}
    centroids = rng.normal(0.0, 1.0, size=(num_cuisines, settings.dim))
    for cuisine, words in enumerate(CUISINE_WORDS):
        for word in words:
            vectors[word] = centroids[cuisine] + rng.normal(0.0, 0.1, size=settings.dim)
    for word in FILLER_WORDS:
        vectors[word] = rng.normal(0.0, 0.3, size=settings.dim)

    reviews: List[Tuple[datetime.date, Review]] = []
    cuisines: Dict[str, int] = {}
    item_bias: Dict[str, float] = {}
    for index in range(settings.n_businesses):
        business_id = f"b{index:03d}"
        cuisine = index % num_cuisines
        bias = float(rng.normal(0.0, 0.2))
        cuisines[business_id] = cuisine
        item_bias[business_id] = bias

        count = int(rng.integers(settings.min_reviews, settings.max_reviews + 1))
        for order, user in enumerate(
            rng.choice(settings.n_users, size=count, replace=False).tolist()
        ):
            rating = (
                3.6
                + user_bias[user]
                + bias
                + float(user_factors[user] @ cuisine_factors[cuisine])
                + rng.normal(0.0, settings.noise)
            )
            date = _FIRST_DATE + datetime.timedelta(days=int(rng.integers(0, 1500)))
            review = Review(
                user_id=f"u{user:03d}",
                business_id=business_id,
                stars=float(min(max(round(rating), 1), 5)),
                # The first review of every business has at least one vote.
                votes=int(rng.poisson(2.0)) + (1 if order == 0 else 0),
                text=_review_text(cuisine, settings.words_per_review, rng),
                date=date,
            )
            reviews.append((date, review))

    reviews.sort(key=lambda entry: (entry[0], entry[1].business_id, entry[1].user_id))
    ordered = [review for _, review in reviews]
    return SyntheticCorpus(ordered, vectors, cuisines, item_bias)


def write_corpus(
    corpus: SyntheticCorpus, directory: Union[str, Path]
) -> Tuple[Path, Path]:
    """
    Write the reviews as `reviews.jsonl` and the word vectors in GloVe text
    format as `vectors.txt`.

    Returns:
        Paths of the review file and the vector file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    reviews_path = directory / "reviews.jsonl"
    dump_reviews(corpus.reviews, reviews_path)

    vectors_path = directory / "vectors.txt"
    with open(vectors_path, "w", encoding="utf-8") as stream:
        for word, vector in corpus.vectors.items():
            stream.write(" ".join([word] + [f"{value:.6f}" for value in vector]))
            stream.write("\n")

    logger.info(
        "Wrote %d synthetic reviews and %d word vectors to ‘%s’",
        len(corpus.reviews),
        len(corpus.vectors),
        directory,
    )
    return reviews_path, vectors_path
