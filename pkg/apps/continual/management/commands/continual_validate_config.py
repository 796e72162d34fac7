from django.core.management.base import BaseCommand

from apps.continual.logic.experiment import validate_experiment
from apps.continual.logic.schemas import load_experiment_config

from ._common import exit_codes


class Command(BaseCommand):
    help = "Validate an experiment YAML file and print the runs it would execute."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Path to the experiment YAML file.")

    def handle(self, *args, **options):
        with exit_codes("validate_config"):
            config = load_experiment_config(options["config"])
            plans = validate_experiment(config)

        self.stdout.write(f"Config {config.name!r} is valid (hash {config.config_hash()})")
        self.stdout.write(f"  ✓ {len(config.stream.tasks)} tasks, "
                          f"{config.stream.total_train} training samples")
        self.stdout.write(f"  ✓ {len(plans)} runs")
        for plan in plans:
            self.stdout.write(f"    {plan.run_id}")
