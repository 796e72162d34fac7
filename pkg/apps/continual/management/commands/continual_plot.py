from django.core.management.base import BaseCommand

from apps.continual.logic.plots import emit_plots
from utilities.enums import PlotKindEnum

from ._common import exit_codes


class Command(BaseCommand):
    help = "Draw SVG figures for an experiment output directory."

    def add_arguments(self, parser):
        parser.add_argument("records_dir", help="Experiment directory (<output-root>/<config-hash>).")
        parser.add_argument(
            "--kind",
            action="append",
            dest="kinds",
            help=f"Plot kind, repeatable ({', '.join(k.value for k in PlotKindEnum)}). Default: all.",
        )

    def handle(self, *args, **options):
        with exit_codes("plot"):
            written = emit_plots(options["records_dir"], options["kinds"])
        if not written:
            self.stdout.write("  ⚠ No plots written.")
            return
        for path in written:
            self.stdout.write(f"  ✓ {path}")
