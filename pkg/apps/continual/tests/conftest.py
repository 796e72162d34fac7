import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CONTINUAL_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="long acceptance run; set CONTINUAL_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def output_root(tmp_path):
    root = tmp_path / "runs"
    root.mkdir()
    return root
