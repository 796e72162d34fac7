"""
Custom logging filters for the continual-learning engine.
"""

import logging


class StepSampleFilter(logging.Filter):
    """
    Thins out per-step trace records.

    Learners and buffers emit one DEBUG record per step, tagged with a
    ``step`` attribute (``logger.debug(..., extra={"step": n})``). This filter
    keeps every record without that attribute and only every ``every``-th
    step record, so long streams don't flood the console.

    Configuration in LOGGING:
        "filters": {
            "step_sample": {
                "()": "utilities.logging_filters.StepSampleFilter",
                "every": 100,
            }
        }
    """

    def __init__(self, every: int = 100, name: str = ""):
        super().__init__(name)
        self.every = max(int(every), 1)

    def filter(self, record: logging.LogRecord) -> bool:
        step = getattr(record, "step", None)
        if step is None:
            return True
        return int(step) % self.every == 0
