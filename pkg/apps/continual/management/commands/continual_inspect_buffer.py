from django.core.management.base import BaseCommand

from apps.continual.logic.checkpoint import describe_buffers
from apps.continual.logic.checkpoint import load_checkpoint

from ._common import exit_codes


def _fmt(value):
    return "-" if value is None else f"{value:.4f}"


class Command(BaseCommand):
    help = "Print size, capacity, task composition and score statistics of each buffer in a checkpoint."

    def add_arguments(self, parser):
        parser.add_argument("checkpoint", help="Path to a .ckpt file.")

    def handle(self, *args, **options):
        with exit_codes("inspect_buffer"):
            payload = load_checkpoint(options["checkpoint"])
            rows = describe_buffers(payload)

        runner = payload["runner"]
        self.stdout.write(
            f"{payload['kind']} seed={runner['seed']} task={runner['task_index']} batch={runner['batch_offset']}",
        )
        if not rows:
            self.stdout.write("  ⚠ Learner keeps no buffers.")
        for row in rows:
            comp = " ".join(f"{task}:{count}" for task, count in row["composition"].items()) or "empty"
            self.stdout.write(f"  ✓ {row['buffer']}: {row['size']}/{row['capacity']} (seen {row['seen']})")
            self.stdout.write(f"    tasks  {comp}")
            self.stdout.write(
                f"    scores min={_fmt(row['score_min'])} mean={_fmt(row['score_mean'])} max={_fmt(row['score_max'])}",
            )
