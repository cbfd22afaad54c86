import runpy
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("script", ["01_pipeline_walkthrough.py", "03_logs_and_replay.py"])
def test_demo_runs(script, capsys):
    runpy.run_path(str(DEMOS / script), run_name="__main__")
    out = capsys.readouterr().out
    assert "Traceback" not in out
    if script.startswith("03"):
        assert "identical to the live run: True" in out
