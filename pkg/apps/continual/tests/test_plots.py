import tempfile
from pathlib import Path

import pandas as pd
from django.test import SimpleTestCase

from apps.continual.logic.experiment import ExperimentRunner
from apps.continual.logic.plots import emit_plots
from apps.continual.logic.schemas import parse_experiment_config
from apps.continual.tests.factories import small_experiment


class EmitPlotsTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        runner = ExperimentRunner(
            parse_experiment_config(small_experiment(joint_reference=True)),
            output_root=cls.tmp.name,
            persist=False,
        )
        runner.run()
        cls.experiment = runner.experiment_dir
        cls.written = emit_plots(cls.experiment)
        cls.plots = cls.experiment / "plots"

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_every_kind_writes_svgs(self):
        names = sorted(p.name for p in self.written)
        self.assertEqual(len(names), 2 + 4 + 2 + 2)
        self.assertIn("task_curves_fde.svg", names)
        self.assertIn("error_matrix_vanilla-b0-s0_mr.svg", names)
        self.assertIn("composition_dualls-b20-s0_diversity.svg", names)
        self.assertIn("loss_trace_dualls-b20-s0.svg", names)
        for path in self.written:
            text = path.read_text(encoding="utf-8")
            self.assertIn("<svg", text)
            self.assertTrue(path.with_suffix(".csv").is_file(), path.name)

    def test_matrix_data_matches_the_run_files(self):
        run = self.experiment / "dualls-b20-s0"
        for metric in ("fde", "mr"):
            source = pd.read_csv(run / f"error_matrix_{metric}.csv", index_col="after_task")
            drawn = pd.read_csv(self.plots / f"error_matrix_dualls-b20-s0_{metric}.csv", index_col="after_task")
            pd.testing.assert_frame_equal(drawn, source)

    def test_stacks_never_exceed_capacity(self):
        for buffer in ("reservoir", "diversity"):
            frame = pd.read_csv(self.plots / f"composition_dualls-b20-s0_{buffer}.csv")
            totals = frame[["task_0", "task_1", "task_2"]].sum(axis=1)
            self.assertLessEqual(totals.max(), 10)
            self.assertTrue(totals.is_monotonic_increasing)

    def test_task_curves_single_seed(self):
        curves = pd.read_csv(self.plots / "task_curves_fde.csv")
        metrics = pd.read_csv(self.experiment / "dualls-b20-s0" / "metrics.csv")
        dual = curves[curves["trainer"] == "dualls"].reset_index(drop=True)
        self.assertEqual(list(dual["task_index"]), [1, 2, 3])
        self.assertAlmostEqual(dual.loc[2, "mean"], metrics.loc[2, "fde_ave"])
        self.assertTrue((dual["std"] == 0.0).all())

    def test_unknown_kinds_are_skipped(self):
        with self.assertLogs("continual.plots", level="WARNING") as logs:
            written = emit_plots(self.experiment, ["heatmap", "loss_trace"])
        self.assertEqual(len(written), 2)
        self.assertIn("action=skip_kind", logs.output[0])

    def test_directory_without_runs(self):
        with tempfile.TemporaryDirectory() as empty:
            with self.assertLogs("continual.plots", level="WARNING") as logs:
                self.assertEqual(emit_plots(Path(empty)), [])
        self.assertIn("action=no_records", logs.output[0])
