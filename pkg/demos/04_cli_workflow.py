"""The command-line workflow end to end, driven from Python.

Write a config, sweep one axis, then collect the curves for plotting.  The
sweep table goes to stdout and to sweep.csv and sweep.json.  From a shell
the same steps are ``fedsim sweep -c demo.cfg ...`` and ``fedsim plotdata``.
"""
import tempfile
from pathlib import Path

from fedsim.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cfg = tmp / "demo.cfg"
    cfg.write_text(
        "# small, fast federation\n"
        "method = fedavg, fedper\n"
        "clients = 5\n"
        "rounds = 8\n"
        "repeats = 2\n"
        "n_samples = 4000\n"
        "n_test = 800\n"
    )
    print("$ fedsim sweep -c demo.cfg --axis alpha_label --values 0.1,5.0")
    main(["sweep", "-c", str(cfg), "--axis", "alpha_label", "--values", "0.1,5.0", "--out", str(tmp / "sweep")])
    print("\n$ fedsim plotdata sweep")
    main(["plotdata", str(tmp / "sweep")])
    lines = (tmp / "sweep" / "plotdata.csv").read_text().splitlines()
    print("\n".join(lines[:6]), f"\n... {len(lines) - 1} rows")
