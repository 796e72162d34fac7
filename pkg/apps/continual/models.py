from django.db import models

from utilities.enums import RunStatusEnum
from utilities.enums import TrainerKindEnum


class ExperimentRun(models.Model):
    """
    One (trainer, buffer budget, seed) run of an experiment.

    The CSV files under ``output_dir`` are the source of truth; this row is
    an index over them so past runs can be listed and compared without
    walking the output tree.
    """

    STATUS_CHOICES = [(s.value, s.name.title()) for s in RunStatusEnum]
    TRAINER_CHOICES = [(k.value, k.name) for k in TrainerKindEnum]

    run_id = models.CharField(max_length=64)
    config_hash = models.CharField(max_length=16, db_index=True)
    trainer = models.CharField(max_length=16, choices=TRAINER_CHOICES)
    seed = models.IntegerField()
    buffer_budget = models.PositiveIntegerField(default=0)
    status = models.CharField(max_length=16, choices=STATUS_CHOICES, default=RunStatusEnum.COMPLETED.value)

    # ── Results ──────────────────────────────────────────────────────
    # Structure: [{"task_index": 1, "fde": ..., "mr": ..., "fde_bwt": ..., ...}, ...]
    metric_rows = models.JSONField(default=list, blank=True)
    final_fde_ave = models.FloatField(null=True, blank=True)
    final_mr_ave = models.FloatField(null=True, blank=True)
    final_fde_bwt = models.FloatField(null=True, blank=True)
    final_mr_bwt = models.FloatField(null=True, blank=True)

    # ── Cost accounting ──────────────────────────────────────────────
    wall_time_s = models.FloatField(default=0.0)
    processed_samples = models.PositiveBigIntegerField(default=0)
    gradient_steps = models.PositiveIntegerField(default=0)

    output_dir = models.CharField(max_length=512, blank=True, default='')
    error_message = models.TextField(blank=True, default='')

    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"
        ordering = ["-created_at"]
        constraints = [
            models.UniqueConstraint(fields=["config_hash", "run_id"], name="uniq_run_per_config"),
        ]
        indexes = [
            models.Index(fields=["trainer", "buffer_budget"], name="idx_run_trainer_budget"),
        ]

    def __str__(self):
        return f"{self.run_id} [{self.config_hash}] {self.status}"

    @property
    def succeeded(self) -> bool:
        return self.status == RunStatusEnum.COMPLETED.value
