import tempfile
from pathlib import Path
from unittest import TestCase

from frostfactor.corpus import load_reviews
from frostfactor.errors import ParameterError
from frostfactor.synthetic import (
    CUISINE_WORDS,
    SyntheticSettings,
    generate_corpus,
    write_corpus,
)
from frostfactor.textprep import load_embeddings

SETTINGS = SyntheticSettings(n_businesses=12, n_users=20, max_reviews=10)


class GenerateCorpusTestCase(TestCase):
    def test_shape(self):
        corpus = generate_corpus(SETTINGS)
        self.assertEqual(len(corpus.cuisines), 12)
        businesses = {review.business_id for review in corpus.reviews}
        self.assertEqual(businesses, set(corpus.cuisines))
        for review in corpus.reviews:
            self.assertTrue(1.0 <= review.stars <= 5.0)
        dates = [review.date for review in corpus.reviews]
        self.assertEqual(dates, sorted(dates))

    def test_every_business_has_votes(self):
        corpus = generate_corpus(SETTINGS)
        votes = {}
        for review in corpus.reviews:
            votes[review.business_id] = votes.get(review.business_id, 0) + review.votes
        self.assertTrue(all(count >= 1 for count in votes.values()))

    def test_deterministic(self):
        first, second = generate_corpus(SETTINGS), generate_corpus(SETTINGS)
        self.assertEqual(first.reviews, second.reviews)
        other = generate_corpus(SyntheticSettings(n_businesses=12, n_users=20, seed=1))
        self.assertNotEqual(generate_corpus(SETTINGS).reviews, other.reviews)

    def test_invalid(self):
        with self.assertRaises(ParameterError):
            SyntheticSettings(n_users=5, max_reviews=10)
        with self.assertRaises(ParameterError):
            SyntheticSettings(rank=0)


class WriteCorpusTestCase(TestCase):
    def test_files_load(self):
        corpus = generate_corpus(SETTINGS)
        with tempfile.TemporaryDirectory() as directory:
            reviews_path, vectors_path = write_corpus(corpus, Path(directory) / "data")
            reviews = load_reviews(reviews_path)
            table = load_embeddings(vectors_path, SETTINGS.dim)

        self.assertEqual(list(reviews), corpus.reviews)
        self.assertEqual(len(table), len(corpus.vectors) + 1)
        self.assertIn(CUISINE_WORDS[0][0], table)
