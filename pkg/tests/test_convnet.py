import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from frostfactor.convnet import (
    CnnConfig,
    CnnModel,
    Gradients,
    backward,
    evaluate_cnn,
    forward,
    history_frame,
    init_cnn,
    load_cnn,
    loss,
    predict_factors,
    save_cnn,
    squared_error,
    train_cnn,
)
from frostfactor.errors import NotFoundError, ParameterError, StaleCacheError
from frostfactor.textprep import PAD_ROW, EmbeddingTable, TokenizedDoc


def doc(business_id, rows, padded_length=None):
    padded_length = padded_length or len(rows)
    token_ids = np.zeros(padded_length, dtype=np.int64)
    token_ids[: len(rows)] = rows
    return TokenizedDoc(business_id, token_ids, len(rows))


def random_table(num_tokens, dim, seed=0):
    rng = np.random.default_rng(seed)
    tokens = [f"w{index}" for index in range(num_tokens)]
    return EmbeddingTable.from_pretrained(
        dim, tokens, rng.normal(0.0, 1.0, size=(num_tokens, dim))
    )


def tiny_model(seed=0):
    config = CnnConfig(embed_dim=3, num_filters=2, window=2, output_dim=2)
    rng = np.random.default_rng(seed)
    return CnnModel(
        config,
        random_table(4, 3, seed),
        rng.normal(0.0, 0.5, size=(2, 6)),
        np.array([0.3, 0.2]),
        rng.normal(0.0, 0.5, size=(2, 2)),
        np.array([0.1, -0.1]),
    )


class ConfigTestCase(TestCase):
    def test_invalid(self):
        for arguments in (
            {"window": 0},
            {"num_filters": 0},
            {"learning_rate": 0},
            {"validation_frac": 1.0},
            {"batch_size": 0},
        ):
            with self.assertRaises(ParameterError):
                CnnConfig(**arguments)

    def test_table_dimension_must_match(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(ParameterError):
            init_cnn(CnnConfig(embed_dim=5), random_table(3, 4), rng)


class ForwardTestCase(TestCase):
    def test_hand_computed(self):
        config = CnnConfig(embed_dim=1, num_filters=1, window=2, output_dim=1)
        table = EmbeddingTable.from_pretrained(
            1, ["a", "b", "c"], np.array([[1.0], [2.0], [-1.0]])
        )
        model = CnnModel(config, table, [[1.0, 0.5]], [0.0], [[3.0]], [0.5])

        prediction, cache = forward(model, doc("x", [1, 2, 3]))

        np.testing.assert_allclose(cache.pre_activations[:, 0], [2.0, 1.5, -1.0])
        self.assertEqual(cache.argmax.tolist(), [0])
        np.testing.assert_allclose(cache.pooled, [2.0])
        np.testing.assert_allclose(prediction, [6.5])

    def test_shapes(self):
        config = CnnConfig(embed_dim=5, num_filters=7, window=4, output_dim=3)
        rng = np.random.default_rng(2)
        model = init_cnn(config, random_table(30, 5), rng)
        for length in (4, 17, 256):
            rows = rng.integers(1, 31, size=length)
            prediction, cache = forward(model, doc("x", rows))
            self.assertEqual(prediction.shape, (3,))
            self.assertEqual(cache.pre_activations.shape, (length, 7))
            self.assertEqual(cache.inputs.shape, (length + 3, 5))
            self.assertTrue(np.all(cache.pooled >= 0))

    def test_shorter_than_window(self):
        config = CnnConfig(embed_dim=2, num_filters=3, window=4, output_dim=2)
        model = init_cnn(config, random_table(5, 2), np.random.default_rng(0))
        self.assertEqual(predict_factors(model, doc("x", [2])).shape, (2,))

    def test_token_order_irrelevant_for_unit_window(self):
        config = CnnConfig(embed_dim=4, num_filters=6, window=1, output_dim=3)
        model = init_cnn(config, random_table(10, 4), np.random.default_rng(1))
        rows = [3, 1, 7, 7, 2, 9]
        np.testing.assert_allclose(
            predict_factors(model, doc("x", rows)),
            predict_factors(model, doc("x", rows[::-1])),
        )

    def test_padding_irrelevant(self):
        config = CnnConfig(embed_dim=4, num_filters=6, window=3, output_dim=3)
        model = init_cnn(config, random_table(10, 4), np.random.default_rng(1))
        np.testing.assert_allclose(
            predict_factors(model, doc("x", [4, 5, 6])),
            predict_factors(model, doc("x", [4, 5, 6], padded_length=12)),
        )

    def test_empty_document(self):
        model = tiny_model()
        with self.assertRaises(ParameterError):
            forward(model, TokenizedDoc("x", np.zeros(3, dtype=np.int64), 0))


class LossTestCase(TestCase):
    def test_values(self):
        self.assertAlmostEqual(squared_error([1.0, 2.0], [1.0, 4.0]), 2.0)
        self.assertAlmostEqual(loss([1.0, 2.0], [1.0, 4.0]), np.sqrt(2.0))

    def test_shape_mismatch(self):
        with self.assertRaises(ParameterError):
            squared_error([1.0, 2.0], [1.0, 2.0, 3.0])


class BackwardTestCase(TestCase):
    def test_against_finite_differences(self):
        model = tiny_model(seed=3)
        document = doc("x", [1, 2, 3, 2], padded_length=6)
        target = np.array([0.4, -0.7])

        prediction, cache = forward(model, document)
        gradients = backward(model, cache, prediction, target)

        def numeric(array, index):
            saved = array[index]
            array[index] = saved + 1e-6
            upper = squared_error(predict_factors(model, document), target)
            array[index] = saved - 1e-6
            lower = squared_error(predict_factors(model, document), target)
            array[index] = saved
            return (upper - lower) / 2e-6

        for name in ("filters", "filter_bias", "dense_w", "dense_b"):
            array = getattr(model, name)
            expected = np.zeros_like(array)
            for index in np.ndindex(array.shape):
                expected[index] = numeric(array, index)
            np.testing.assert_allclose(
                getattr(gradients, name), expected, atol=1e-7, err_msg=name
            )

        matrix = model.embedding.matrix
        self.assertEqual(gradients.rows.tolist(), [1, 2, 3])
        for row in (1, 2, 3):
            expected = [numeric(matrix, (row, c)) for c in range(3)]
            np.testing.assert_allclose(
                gradients.embedding_row(row), expected, atol=1e-7
            )
        np.testing.assert_array_equal(gradients.embedding_row(PAD_ROW), np.zeros(3))

    def test_stale_cache(self):
        model = tiny_model()
        prediction, cache = forward(model, doc("x", [1, 2]))
        model.version += 1
        with self.assertRaises(StaleCacheError):
            backward(model, cache, prediction, np.zeros(2))

    def test_total(self):
        model = tiny_model(seed=1)
        parts = []
        for document in (doc("x", [1, 2]), doc("y", [2, 4])):
            prediction, cache = forward(model, document)
            parts.append(backward(model, cache, prediction, np.ones(2)))

        total = Gradients.total(parts)
        np.testing.assert_allclose(total.dense_w, parts[0].dense_w + parts[1].dense_w)
        self.assertEqual(total.rows.tolist(), [1, 2, 4])
        np.testing.assert_allclose(
            total.embedding_row(2),
            parts[0].embedding_row(2) + parts[1].embedding_row(2),
        )
        np.testing.assert_allclose(total.embedding_row(4), parts[1].embedding_row(4))


def learnable_problem(table, num_docs=60, seed=0):
    """
    Documents over the table's tokens whose targets are a fixed linear map
    of their mean token embedding.
    """
    rng = np.random.default_rng(seed)
    weights = np.hstack(
        [[[1.5], [-0.5]], rng.normal(0.0, 0.15, size=(2, table.dim - 1))]
    )
    docs, targets = [], {}
    for index in range(num_docs):
        business_id = f"b{index:02d}"
        rows = rng.integers(1, len(table), size=int(rng.integers(3, 9)))
        docs.append(doc(business_id, rows, 8))
        targets[business_id] = weights @ table.matrix[rows].mean(axis=0)
    return docs, targets


def biased_table(num_tokens, dim, seed=0):
    # The first component of every token is 1, so the map has an offset.
    table = random_table(num_tokens, dim, seed)
    table.matrix[1:, 0] = 1.0
    return table


class TrainingTestCase(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.table = biased_table(6, 4)
        cls.docs, cls.targets = learnable_problem(cls.table)
        cls.config = CnnConfig(
            embed_dim=4,
            num_filters=5,
            window=2,
            output_dim=2,
            learning_rate=0.05,
            batch_size=8,
            max_epochs=60,
            seed=5,
        )
        cls.model, cls.history = train_cnn(cls.docs, cls.targets, cls.config, cls.table)

    def test_learns(self):
        self.assertEqual(len(self.history), self.config.max_epochs + 1)
        self.assertEqual(self.history[0].epoch, 0)
        final = self.history[self.model.epoch].val_rmse
        self.assertLess(final, 0.1 * self.history[0].val_rmse)

    def test_returns_best_validation_model(self):
        best = min(record.val_rmse for record in self.history)
        self.assertEqual(self.history[self.model.epoch].val_rmse, best)

    def test_table_left_alone(self):
        np.testing.assert_array_equal(self.table.matrix, biased_table(6, 4).matrix)

    def test_padding_row_stays_zero(self):
        np.testing.assert_array_equal(self.model.embedding.matrix[PAD_ROW], np.zeros(4))

    def test_deterministic(self):
        model, history = train_cnn(self.docs, self.targets, self.config, self.table)
        self.assertEqual(history, self.history)
        for name, array in model.parameters().items():
            np.testing.assert_array_equal(array, self.model.parameters()[name])

    def test_checkpoint(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "cnn.ckpt"
            save_cnn(self.model, path, self.history)
            loaded, history = load_cnn(path)

        self.assertEqual(history, self.history)
        self.assertEqual(loaded.config, self.config)
        self.assertEqual(loaded.epoch, self.model.epoch)
        self.assertEqual(
            evaluate_cnn(loaded, self.docs, self.targets),
            evaluate_cnn(self.model, self.docs, self.targets),
        )

    def test_history_frame(self):
        frame = history_frame(self.history)
        self.assertEqual(list(frame.columns), ["epoch", "train_rmse", "val_rmse"])
        self.assertEqual(frame.epoch.tolist(), list(range(self.config.max_epochs + 1)))


class TrainingInputTestCase(TestCase):
    def setUp(self):
        self.table = biased_table(6, 4)
        self.docs, self.targets = learnable_problem(self.table, num_docs=4)
        self.config = CnnConfig(embed_dim=4, num_filters=2, window=2, output_dim=2)

    def test_too_few_documents(self):
        with self.assertRaises(ParameterError):
            train_cnn(self.docs[:1], self.targets, self.config, self.table)

    def test_missing_targets(self):
        del self.targets["b01"], self.targets["b03"]
        with self.assertRaises(NotFoundError) as context:
            train_cnn(self.docs, self.targets, self.config, self.table)
        self.assertIn("b01, b03", str(context.exception))

    def test_wrong_target_shape(self):
        self.targets["b02"] = np.zeros(3)
        with self.assertRaises(ParameterError):
            train_cnn(self.docs, self.targets, self.config, self.table)
