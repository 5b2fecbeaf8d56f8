"""
Tests for the command-line interface.
"""

import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from underreporting.cli import create_parser, main
from underreporting.tests.test_utils import EXAMPLE_SIGMA, LABELLED_SCHEMA, write_json, write_labelled_csv


class TestCli(unittest.TestCase):
    """Test case for the CLI entry point."""

    def setUp(self):
        """Set up a temporary directory."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def _main(self, *argv: str) -> int:
        with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            return main(list(argv))

    def _out(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def test_parser_subcommands(self):
        """Every pipeline step is a subcommand."""
        args = create_parser().parse_args(["corrupt", "bundle", "--feature", "x1", "--rate-g1", "0.3"])
        self.assertEqual(args.command, "corrupt")
        self.assertEqual(args.rate_g1, 0.3)

    def test_version(self):
        """--version exits with 0."""
        self.assertEqual(self._main("--version"), 0)

    def test_usage_errors(self):
        """Bad arguments exit with 1."""
        self.assertEqual(self._main("theory"), 1)
        self.assertEqual(self._main("--bogus-flag"), 1)
        self.assertEqual(self._main("fit", "bundle", "--method", "lasso"), 1)

    def test_missing_input_file(self):
        """A missing input file is a data error, exit code 2."""
        self.assertEqual(self._main("--out-dir", self._out("out"), "theory", self._out("missing.json")), 2)

    def test_theory(self):
        """The theory command reports the case constant of the worked example."""
        moments = {
            "mu": [0.0, 0.0], "sigma": EXAMPLE_SIGMA, "alpha": 0.0, "beta": [1.0, 1.0],
            "r": 0.5, "m0": [0.5, 1.0], "m1": [0.5, 1.0], "target_feature": 0,
        }
        path = write_json(self._out("moments.json"), moments)
        self.assertEqual(self._main("--out-dir", self._out("theory"), "--format", "json", "theory", path, "--C", "0.1"), 0)
        with open(os.path.join(self._out("theory"), "theory.json"), "r", encoding="utf-8") as f:
            report = json.load(f)
        self.assertAlmostEqual(report["c"], 0.5714, places=4)
        self.assertEqual(report["case_label"], "Case2_underselected")
        self.assertEqual(len(report["excess_selection"]), 2)

    def test_theory_rejects_zero_coefficient(self):
        """A zero coefficient on the target feature is a usage error."""
        moments = {"mu": [0.0, 0.0], "sigma": EXAMPLE_SIGMA, "beta": [0.0, 1.0], "m1": [0.5, 1.0]}
        path = write_json(self._out("moments.json"), moments)
        self.assertEqual(self._main("--out-dir", self._out("theory"), "theory", path), 1)

    def test_invalid_selection_grid(self):
        """A selection grid outside (0,1) is a usage error for audit and run."""
        self.assertEqual(
            self._main("--out-dir", self._out("audit"), "audit", self._out("corrupted.csv"), self._out("reference.csv"),
                       "--grid", "0", "0.5"),
            1,
        )
        config = {"population": {"mu": [0.0, 0.0], "sigma": EXAMPLE_SIGMA, "beta": [1.0, 1.0]},
                  "n_rows": 500, "features": ["z1"], "rates": [0.5], "reps": 1, "C_grid": [0.0, 0.5]}
        path = write_json(self._out("experiment.json"), config)
        self.assertEqual(self._main("--out-dir", self._out("run"), "--quiet", "run", path), 1)

    def test_save_config(self):
        """--save-config writes the effective settings, flags included."""
        path = self._out("settings.json")
        self.assertEqual(self._main("--seed", "7", "--format", "json", "--save-config", path), 0)
        with open(path, "r", encoding="utf-8") as f:
            saved = json.load(f)
        self.assertEqual(saved["run/seed"], 7)
        self.assertEqual(saved["output/format"], "json")
        self.assertEqual(saved["mitigate/n_draws"], 5)
        self.assertEqual(self._main("--config", path, "--save-config", self._out("copy.json")), 0)
        with open(self._out("copy.json"), "r", encoding="utf-8") as f:
            self.assertEqual(json.load(f)["run/seed"], 7)

    def test_audit_of_identical_predictions(self):
        """Identical prediction files give zero excess selection everywhere."""
        rng = np.random.default_rng(0)
        predictions = pd.DataFrame({"prediction": rng.normal(size=200), "group": (rng.random(200) < 0.5).astype(int)})
        predictions.to_csv(self._out("corrupted.csv"), index=False)
        predictions[["prediction"]].to_csv(self._out("reference.csv"), index=False)
        code = self._main(
            "--out-dir", self._out("audit"), "audit", self._out("corrupted.csv"), self._out("reference.csv"),
            "--grid", "0.1", "0.5",
        )
        self.assertEqual(code, 0)
        audit = pd.read_csv(os.path.join(self._out("audit"), "audit.csv"))
        self.assertEqual(len(audit), 4)
        self.assertTrue((audit["delta"] == 0.0).all())

    def test_pipeline(self):
        """ingest, synthesize, corrupt and fit chain through dataset bundles."""
        csv_path = write_labelled_csv(self.dir, n=600)
        schema_path = write_json(self._out("schema.json"), LABELLED_SCHEMA)
        self.assertEqual(self._main("--out-dir", self._out("raw"), "ingest", csv_path, "--schema", schema_path), 0)
        self.assertEqual(
            self._main("--out-dir", self._out("synth"), "synthesize", os.path.join(self._out("raw"), "dataset"),
                       "--noise-r2", "0.7"),
            0,
        )
        synthesized = os.path.join(self._out("synth"), "dataset")
        self.assertEqual(
            self._main("--out-dir", self._out("corrupt"), "--seed", "3", "corrupt", synthesized,
                       "--feature", "priors", "--rate-g1", "0.5"),
            0,
        )
        corrupted = os.path.join(self._out("corrupt"), "dataset")
        self.assertEqual(
            self._main("--out-dir", self._out("fit"), "--format", "json", "fit", corrupted,
                       "--method", "augmented", "--feature", "priors", "--predict", corrupted),
            0,
        )
        with open(os.path.join(self._out("fit"), "model.json"), "r", encoding="utf-8") as f:
            model = json.load(f)
        self.assertEqual(model["method"], "augmented")
        self.assertEqual(model["rates_used"]["0"], 1.0)
        self.assertEqual(len(model["beta"]), 3)
        with open(os.path.join(self._out("fit"), "predictions.json"), "r", encoding="utf-8") as f:
            self.assertEqual(len(json.load(f)), 600)

    def test_estimate_rate(self):
        """estimate-rate reports an estimate for a corrupted bundle."""
        csv_path = write_labelled_csv(self.dir, n=600)
        schema_path = write_json(self._out("schema.json"), LABELLED_SCHEMA)
        self._main("--out-dir", self._out("raw"), "ingest", csv_path, "--schema", schema_path)
        self._main("--out-dir", self._out("corrupt"), "corrupt", os.path.join(self._out("raw"), "dataset"),
                   "--feature", "0", "--rate-g0", "0.4", "--rate-g1", "0.4")
        code = self._main("--out-dir", self._out("rate"), "--format", "json", "estimate-rate",
                          os.path.join(self._out("corrupt"), "dataset"), "--feature", "priors")
        self.assertEqual(code, 0)
        with open(os.path.join(self._out("rate"), "rate_estimate.json"), "r", encoding="utf-8") as f:
            estimate = json.load(f)
        self.assertAlmostEqual(estimate["m_hat"], 0.6, delta=0.1)


if __name__ == "__main__":
    unittest.main()
