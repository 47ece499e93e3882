"""Rewrite the golden CSVs checked by ``ddztd verify``.

Run only after an intentional change to a driver's output, then review the diff.
Every golden config's drivers are run into ``src/ddztd/goldens/<name>/<driver>/``;
manifests are dropped because they embed library versions.
"""

import shutil
import sys
from pathlib import Path

from ddztd import cli
from ddztd.config import load_config


def main() -> int:
    root = cli.shipped_configs_dir().parent / "goldens"
    status = 0
    for path in cli.golden_configs():
        cfg = load_config(path)
        for driver in cfg["verify"]["drivers"]:
            out = root / cfg["name"] / driver
            if out.exists():
                shutil.rmtree(out)
            code, _ = cli.execute(driver, cfg, out)
            (out / "manifest.json").unlink()
            print(f"{cfg['name']}/{driver}: exit {code}")
            status |= code
    return status


if __name__ == "__main__":
    sys.exit(main())
