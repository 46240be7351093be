import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from frostfactor.errors import EmbeddingFormatError, ParameterError
from frostfactor.textprep import (
    PAD_ROW,
    EmbeddingTable,
    Provenance,
    bounded_edit_distance,
    compact_table,
    edit_distance,
    load_docs,
    load_embeddings,
    nearest_alias,
    prepare_docs,
    resolve_token,
    save_docs,
    tokenize,
)


def naive_distance(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return table[len(a)][len(b)]


def small_table():
    tokens = ["good", "food", "great", "service", "pizza"]
    vectors = np.arange(len(tokens) * 3, dtype=np.float64).reshape(len(tokens), 3)
    return EmbeddingTable.from_pretrained(3, tokens, vectors)


class TokenizeTestCase(TestCase):
    def test_split_and_lowercase(self):
        self.assertEqual(
            tokenize("Great pizza, GREAT service!! 10/10 would_eat again."),
            ["great", "pizza", "great", "service", "10", "10", "would", "eat", "again"],
        )

    def test_unicode_letters(self):
        self.assertEqual(
            tokenize("Crème brûlée—très bon"), ["crème", "brûlée", "très", "bon"]
        )

    def test_no_tokens(self):
        self.assertEqual(tokenize(" ... !!! "), [])


class EditDistanceTestCase(TestCase):
    def test_known_values(self):
        self.assertEqual(edit_distance("kitten", "sitting"), 3)
        self.assertEqual(edit_distance("", "abc"), 3)
        self.assertEqual(edit_distance("flaw", "lawn"), 2)
        self.assertEqual(edit_distance("same", "same"), 0)

    def test_against_naive(self):
        rng = np.random.default_rng(11)
        alphabet = list("abcde")
        for _ in range(1000):
            a = "".join(rng.choice(alphabet, size=rng.integers(0, 9)))
            b = "".join(rng.choice(alphabet, size=rng.integers(0, 9)))
            expected = naive_distance(a, b)
            self.assertEqual(edit_distance(a, b), expected)
            self.assertEqual(edit_distance(b, a), expected)
            for limit in (0, 1, 2, 3):
                self.assertEqual(
                    bounded_edit_distance(a, b, limit), min(expected, limit + 1)
                )

    def test_metric_properties(self):
        rng = np.random.default_rng(12)
        alphabet = list("abc")

        def word():
            return "".join(rng.choice(alphabet, size=rng.integers(0, 7)))

        for _ in range(1000):
            a, b, c = word(), word(), word()
            self.assertEqual(edit_distance(a, b), edit_distance(b, a))
            self.assertLessEqual(
                edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c)
            )
            self.assertEqual(edit_distance(a, b) == 0, a == b)


class EmbeddingTableTestCase(TestCase):
    def test_pretrained(self):
        table = small_table()
        self.assertEqual(len(table), 6)
        self.assertEqual(table.row_of("good"), 1)
        self.assertIn("pizza", table)
        self.assertNotIn("pasta", table)
        np.testing.assert_array_equal(table.matrix[PAD_ROW], np.zeros(3))
        self.assertEqual(table.row_provenance[0], Provenance.PADDING)
        self.assertEqual(table.provenance_counts(), {Provenance.PRETRAINED: 5})

    def test_growth(self):
        table = EmbeddingTable(2)
        for index in range(40):
            self.assertEqual(
                table.append(f"t{index}", [index, -index], Provenance.RANDOM_INIT),
                index + 1,
            )
        self.assertEqual(table.matrix.shape, (41, 2))
        np.testing.assert_array_equal(table.matrix[40], [39.0, -39.0])

    def test_wrong_vector_length(self):
        with self.assertRaises(ParameterError):
            EmbeddingTable(3).append("x", [1.0, 2.0], Provenance.RANDOM_INIT)

    def test_copy_is_independent(self):
        table = small_table()
        copied = table.copy()
        copied.append("pasta", np.ones(3), Provenance.RANDOM_INIT)
        self.assertNotIn("pasta", table)
        self.assertEqual(len(table), 6)


class LoadEmbeddingsTestCase(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name) / "vectors.txt"

    def tearDown(self):
        self.directory.cleanup()

    def test_load(self):
        self.path.write_text(
            "the 0.1 0.2 0.3\ncafé -1 0 1e-3\n\nthe 9 9 9\n", encoding="utf-8"
        )
        with self.assertLogs("frostfactor.textprep", level="WARNING"):
            table = load_embeddings(self.path, dim=3)
        self.assertEqual(len(table), 3)
        np.testing.assert_array_equal(table.matrix[1], [0.1, 0.2, 0.3])
        np.testing.assert_array_equal(table.matrix[2], [-1.0, 0.0, 0.001])

    def test_wrong_width(self):
        self.path.write_text("a 1 2 3\nb 1 2\n", encoding="utf-8")
        with self.assertRaises(EmbeddingFormatError) as context:
            load_embeddings(self.path, dim=3)
        self.assertEqual(context.exception.line_number, 2)

    def test_not_a_number(self):
        self.path.write_text("a 1 two 3\n", encoding="utf-8")
        with self.assertRaises(EmbeddingFormatError):
            load_embeddings(self.path, dim=3)

    def test_invalid_utf8(self):
        self.path.write_bytes(b"a 1 2 3\n\xffb 1 2 3\n")
        with self.assertRaises(EmbeddingFormatError) as context:
            load_embeddings(self.path, dim=3)
        self.assertEqual(context.exception.line_number, 2)


class ResolveTestCase(TestCase):
    def test_known_token(self):
        table = small_table()
        rng = np.random.default_rng(0)
        self.assertEqual(resolve_token("pizza", table, rng), 5)
        self.assertEqual(len(table), 6)

    def test_alias(self):
        table = small_table()
        row = resolve_token("piza", table, np.random.default_rng(0))
        self.assertEqual(row, table.row_of("pizza"))
        self.assertEqual(table.token_provenance("piza"), Provenance.EDIT_DISTANCE_ALIAS)
        self.assertEqual(len(table), 6)

    def test_alias_tie_prefers_smallest_token(self):
        # "mood" is one edit from both "food" and "good".
        self.assertEqual(nearest_alias("mood", small_table()), ("food", 1))

    def test_alias_prefers_closest(self):
        table = EmbeddingTable.from_pretrained(1, ["abcdx", "abdyz"], [[1.0], [2.0]])
        self.assertEqual(nearest_alias("abcdy", table), ("abcdx", 1))
        self.assertEqual(nearest_alias("abdyy", table), ("abdyz", 1))

    def test_random_fallback(self):
        table = small_table()
        row = resolve_token("zyxwvut", table, np.random.default_rng(0), init_range=0.1)
        self.assertEqual(row, 6)
        self.assertEqual(table.token_provenance("zyxwvut"), Provenance.RANDOM_INIT)
        self.assertTrue(np.all(np.abs(table.matrix[row]) <= 0.1))

    def test_aliases_only_target_pretrained_tokens(self):
        table = small_table()
        rng = np.random.default_rng(0)
        resolve_token("qqqqqqq", table, rng)
        row = resolve_token("qqqqqqx", table, rng)
        self.assertEqual(table.token_provenance("qqqqqqx"), Provenance.RANDOM_INIT)
        self.assertEqual(row, 7)

    def test_threshold(self):
        table = small_table()
        resolve_token("servixxx", table, np.random.default_rng(0), max_distance=2)
        self.assertEqual(table.token_provenance("servixxx"), Provenance.RANDOM_INIT)


class PrepareDocsTestCase(TestCase):
    def descriptions(self):
        return [
            ("b1", "Good pizza!"),
            ("b2", "Great service, great piza, zzzz"),
            ("b3", "food"),
        ]

    def test_padding(self):
        table = small_table()
        docs = prepare_docs(self.descriptions(), table, np.random.default_rng(1))

        self.assertEqual([doc.business_id for doc in docs], ["b1", "b2", "b3"])
        self.assertEqual([doc.true_length for doc in docs], [2, 5, 1])
        for doc in docs:
            self.assertEqual(len(doc.token_ids), 5)
            self.assertTrue(np.all(doc.token_ids[doc.true_length :] == PAD_ROW))
            self.assertTrue(np.all(doc.token_ids[: doc.true_length] != PAD_ROW))
        self.assertEqual(docs[1].token_ids.tolist(), [3, 4, 3, 5, 6])
        self.assertEqual(table.token_provenance("zzzz"), Provenance.RANDOM_INIT)

    def test_truncation(self):
        docs = prepare_docs(
            self.descriptions(), small_table(), np.random.default_rng(1), max_length=3
        )
        self.assertEqual([doc.true_length for doc in docs], [2, 3, 1])
        self.assertEqual(len(docs[0].token_ids), 3)

    def test_deterministic(self):
        first_table, second_table = small_table(), small_table()
        prepare_docs(self.descriptions(), first_table, np.random.default_rng(3))
        prepare_docs(self.descriptions(), second_table, np.random.default_rng(3))
        np.testing.assert_array_equal(first_table.matrix, second_table.matrix)

    def test_empty_descriptions(self):
        with self.assertRaises(ParameterError) as context:
            prepare_docs(
                [("b1", "ok"), ("b2", "!!"), ("b3", "")],
                small_table(),
                np.random.default_rng(0),
            )
        self.assertIn("b2, b3", str(context.exception))

    def test_compact_and_save(self):
        table = small_table()
        docs = prepare_docs(self.descriptions(), table, np.random.default_rng(1))
        compact_docs, compact = compact_table(docs[:1], table)
        self.assertEqual(len(compact), 3)
        self.assertEqual(compact_docs[0].token_ids.tolist(), [1, 2])
        np.testing.assert_array_equal(compact.matrix[1], table.matrix[1])
        np.testing.assert_array_equal(compact.matrix[2], table.matrix[5])
        self.assertEqual(compact.vocab, {"good": 1, "pizza": 2, "piza": 2})

        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "docs.bin"
            save_docs(path, docs, table)
            loaded_docs, loaded = load_docs(path)

        np.testing.assert_array_equal(loaded.matrix, table.matrix)
        self.assertEqual(loaded.vocab, table.vocab)
        self.assertEqual(loaded.row_provenance, table.row_provenance)
        self.assertEqual(
            loaded.token_provenance("piza"), Provenance.EDIT_DISTANCE_ALIAS
        )
        for original, restored in zip(docs, loaded_docs):
            self.assertEqual(original.business_id, restored.business_id)
            self.assertEqual(original.true_length, restored.true_length)
            np.testing.assert_array_equal(original.token_ids, restored.token_ids)
