import math
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from frostfactor.errors import ParameterError
from frostfactor.evaluation import (
    COMBINED,
    EvalReport,
    SetOutcome,
    build_report,
    pooled_identity_holds,
    rmse,
    squared_error_sum,
)


class RmseTestCase(TestCase):
    def test_value(self):
        pairs = [(3.0, 4.0), (2.0, 2.0), (5.0, 3.0)]
        self.assertAlmostEqual(rmse(pairs), math.sqrt(5 / 3))

    def test_perfect(self):
        self.assertEqual(rmse([(4.5, 4.5), (1.0, 1.0)]), 0.0)

    def test_empty(self):
        with self.assertRaises(ParameterError):
            rmse([])

    def test_order_independent(self):
        rng = np.random.default_rng(5)
        pairs = [tuple(pair) for pair in rng.uniform(1, 5, size=(500, 2))]
        shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
        self.assertEqual(squared_error_sum(pairs), squared_error_sum(shuffled))


class SetOutcomeTestCase(TestCase):
    def test_from_pairs(self):
        outcome = SetOutcome.from_pairs([(3.0, 4.0), (1.0, 3.0)])
        self.assertEqual(outcome.sse, (5.0,))
        self.assertEqual(outcome.n, 2)
        self.assertFalse(outcome.stochastic)
        self.assertAlmostEqual(outcome.rmses[0], math.sqrt(2.5))

    def test_invalid(self):
        with self.assertRaises(ParameterError):
            SetOutcome((), 3)
        with self.assertRaises(ParameterError):
            SetOutcome((1.0,), 0)
        with self.assertRaises(ParameterError):
            SetOutcome((1.0, 2.0), 3)


class ReportTestCase(TestCase):
    def setUp(self):
        self.results = {
            "random1": {
                "test1": SetOutcome((8.0, 18.0), 2, stochastic=True),
                "test2": SetOutcome((6.0, 3.0), 3, stochastic=True),
            },
            "cnn": {
                "test1": SetOutcome((2.0,), 2),
                "test2": SetOutcome((0.75,), 3),
            },
            "oracle": {"test1": SetOutcome((0.5,), 2)},
        }
        self.report = build_report(self.results, {"seed": 7})

    def test_deterministic_entries(self):
        cnn = self.report.rows["cnn"]
        self.assertAlmostEqual(cnn["test1"].rmse, 1.0)
        self.assertAlmostEqual(cnn["test2"].rmse, 0.5)
        self.assertIsNone(cnn["test1"].variance)
        self.assertAlmostEqual(cnn[COMBINED].rmse, math.sqrt(2.75 / 5))
        self.assertEqual(cnn[COMBINED].n_reviews, 5)

    def test_stochastic_entries(self):
        test1 = self.report.rows["random1"]["test1"]
        self.assertAlmostEqual(test1.rmse, 2.5)
        self.assertAlmostEqual(test1.variance, 0.25)
        self.assertAlmostEqual(test1.stddev, 0.5)

        combined = self.report.rows["random1"][COMBINED]
        expected = [math.sqrt(14.0 / 5), math.sqrt(21.0 / 5)]
        self.assertAlmostEqual(combined.rmse, float(np.mean(expected)))
        self.assertAlmostEqual(combined.variance, float(np.var(expected)))

    def test_single_set_has_no_combined_column(self):
        self.assertEqual(list(self.report.rows["oracle"]), ["test1"])

    def test_improvements(self):
        deltas = self.report.improvements["cnn"]["random1"]
        self.assertAlmostEqual(deltas["test1"], 1.5)
        self.assertEqual(list(self.report.improvements["oracle"]["random1"]), ["test1"])
        self.assertNotIn("random1", self.report.improvements)
        self.assertNotIn("random2", self.report.improvements["cnn"])

    def test_pooled_identity(self):
        self.assertTrue(pooled_identity_holds(self.report))
        self.report.rows["cnn"]["test2"] = self.report.rows["cnn"]["test1"]
        self.assertFalse(pooled_identity_holds(self.report))

    def test_frame(self):
        frame = self.report.to_frame()
        columns = ["method", "set", "rmse", "variance", "n"]
        self.assertEqual(list(frame.columns), columns)
        self.assertEqual(len(frame), 3 + 3 + 1)

    def test_json(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "report.json"
            self.report.to_json(path)
            loaded = EvalReport.from_json(path)
        self.assertEqual(loaded, self.report)

    def test_table(self):
        table = self.report.format_table()
        lines = table.splitlines()
        self.assertIn("Test set 1 + Test set 2", lines[0])
        self.assertTrue(lines[1].startswith("Random 1"))
        self.assertIn("2.5000±0.2", lines[1])
        self.assertIn("Proposed vs Random 1: Test set 1 +1.5000", table)

    def test_empty(self):
        with self.assertRaises(ParameterError):
            build_report({})

    def test_mixed_trial_counts(self):
        with self.assertRaises(ParameterError):
            build_report(
                {
                    "random2": {
                        "test1": SetOutcome((1.0, 2.0), 2, stochastic=True),
                        "test2": SetOutcome((1.0,), 2, stochastic=True),
                    }
                }
            )
