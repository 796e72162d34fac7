from django.core.management.base import BaseCommand
from django.core.management.base import CommandError
from tqdm import tqdm

from apps.continual.logic.experiment import ExperimentRunner
from apps.continual.logic.experiment import validate_experiment
from apps.continual.logic.plots import emit_plots
from apps.continual.logic.schemas import load_experiment_config
from utilities import artifact_paths as paths
from utilities.enums import RunStatusEnum

from ._common import EXIT_RUNTIME
from ._common import exit_codes


class Command(BaseCommand):
    help = "Run every (trainer, budget, seed) combination of an experiment file."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Path to the experiment YAML file.")
        parser.add_argument("--workers", type=int, default=None, help="Process pool size (default: the config file, else CONTINUAL_WORKERS).")
        parser.add_argument("--output-root", default=None, help="Override CONTINUAL_OUTPUT_ROOT.")
        parser.add_argument("--no-plots", action="store_true", help="Skip SVG emission after the runs.")
        parser.add_argument("--no-db", action="store_true", help="Do not index runs in the database.")
        parser.add_argument("--progress", action="store_true", help="Show a progress bar.")

    def handle(self, *args, **options):
        with exit_codes("run"):
            config = load_experiment_config(options["config"])
            n_runs = len(validate_experiment(config))

            bar = tqdm(total=n_runs, unit="run", disable=not options["progress"])

            def on_done(record):
                bar.update(1)
                bar.set_postfix_str(record.run_id)

            runner = ExperimentRunner(
                config,
                output_root=options["output_root"],
                workers=options["workers"],
                persist=not options["no_db"],
                on_run_complete=on_done,
            )
            self.stdout.write(f"Running {n_runs} runs of {config.name!r} into {runner.experiment_dir}")
            try:
                records = runner.run()
            finally:
                bar.close()

            for record in records:
                if record.status == RunStatusEnum.COMPLETED.value:
                    self.stdout.write(
                        f"  ✓ {record.run_id}  FDE-AVE={record.final('fde_ave'):.4f}  MR-AVE={record.final('mr_ave'):.4f}",
                    )
                else:
                    self.stdout.write(f"  ✗ {record.run_id}  {record.error_message}")

            if not options["no_plots"] and config.plots:
                written = emit_plots(runner.experiment_dir, config.plots)
                self.stdout.write(f"  ✓ {len(written)} plots")

        self.stdout.write(f"Summary: {paths.summary_csv(runner.experiment_dir)}")
        failed = [r.run_id for r in records if r.status == RunStatusEnum.FAILED.value]
        if failed:
            raise CommandError(
                f"{len(failed)} of {len(records)} runs failed: {', '.join(failed)}",
                returncode=EXIT_RUNTIME,
            )
