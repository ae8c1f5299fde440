"""
Command-line pipeline
=====================

The same capabilities are exposed as ``uwbcal`` subcommands. This script
drives them through ``uwbcal.cli.main`` in a temporary directory.
"""

import tempfile
from pathlib import Path

from uwbcal.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cfg = tmp / "short.ini"
    cfg.write_text("[scenario]\nduration = 30\n")
    main(["simulate", "--preset", "TR-N", "--seed", "7", "--config", str(cfg), "--out", str(tmp / "sim")])
    main(["estimate", "--imu", str(tmp / "sim/imu.csv"), "--ranges", str(tmp / "sim/ranges.csv"),
          "--anchors", str(tmp / "sim/anchors.csv"), "--truth", str(tmp / "sim/truth.csv"), "--out", str(tmp / "est")])
    code = main(["check", "--preset", "TR-C2", "--config", str(cfg)])
    print("check exit code for TR-C2:", code)
    main(["report", str(tmp / "est")])
