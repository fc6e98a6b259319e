import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest


def cli(*argv):
    """Invoke the native command-line runner (the external interface)."""
    return subprocess.run(
        [sys.executable, "-m", "lanebench.cli", *argv], capture_output=True, text=True
    )


@pytest.fixture(scope="session")
def circle_bundle(tmp_path_factory):
    """Radius-10 circular track bundle; a fixed arc action stays on it forever."""
    root = tmp_path_factory.mktemp("parity")
    centers_csv = root / "centers_in.csv"
    n = 240
    with open(centers_csv, "w", newline="") as fh:
        fh.write("i,x,y\n")
        for i in range(n):
            a = 2 * math.pi * i / n
            fh.write(f"{i},{10 * math.cos(a):.17g},{10 * math.sin(a):.17g}\n")
    bundle = root / "bundle"
    res = cli(
        "gen-track",
        "--set", f"track.centers_csv={centers_csv}",
        "--set", "track.j=1",
        "--set", "track.w=0",
        "--set", "track.r=0.0",
        "--set", "track.ds=0.1",
        "--out", str(bundle),
    )
    assert res.returncode == 0, res.stderr
    return bundle
