"""Scenario pipeline end to end: config file in, CSV + JSON report out.

The same entry point backs the ``haraforward run`` console command.
"""

import json
import tempfile
from pathlib import Path

from haraforward.cli import run_scenario

scenario = {
    "market": {
        "kind": "binomial", "T": 2, "s0": 1.0,
        "xi_u": [1.2, 1.3], "xi_d": [0.9, 0.8], "prob_up": [0.5, 0.4],
    },
    "utility": {"kind": "power", "p": 0.5, "terminal_D": 1.0},
    "run": {
        "seed": 42,
        "n_random_strategies": 300,
        "n_competitor_densities": 30,
        "checks": ["verify", "mhm", "reconstruction", "closed_form_crosscheck"],
    },
}

with tempfile.TemporaryDirectory() as tmp:
    cfg = Path(tmp) / "scenario.json"
    cfg.write_text(json.dumps(scenario, indent=2))
    code = run_scenario(cfg, out_dir=tmp)
    print(f"\nexit code: {code}")

    print("\nresult.csv (first lines):")
    for line in (Path(tmp) / "result.csv").read_text().splitlines()[:5]:
        print(" ", line)

    report = json.loads((Path(tmp) / "report.json").read_text())
    print("\nreport.json check verdicts:")
    for name, chk in report["checks"].items():
        print(f"  {name}: {chk['verdict']}")
