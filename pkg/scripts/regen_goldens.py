#!/usr/bin/env python3
"""Regenerate the golden first-hit distributions under tests/data/.

The stored files pin the oracle quadrature (dt, horizon) used by the
acceptance suite; rerun after any deliberate change to the hazard model and
review the diff.
"""

from pathlib import Path

from reduction_sim.analysis import first_hit_oracle
from reduction_sim.scenarios import hammer_chain, parallel_diamond, series_chain

DATA_DIR = Path(__file__).resolve().parent.parent / "tests" / "data"

GOLDENS = {
    "first_hit_series2_rule4_on.txt": (series_chain(2), 20.0, 1e-5, True),
    "first_hit_series3_rule4_off.txt": (series_chain(3), 40.0, 1e-5, False),
    "first_hit_series4_rule4_on.txt": (series_chain(4), 40.0, 1e-5, True),
    "first_hit_diamond_rule4_on.txt": (parallel_diamond(), 40.0, 1e-5, True),
    "first_hit_diamond_rule4_off.txt": (parallel_diamond(), 40.0, 1e-5, False),
    "first_hit_hammer8_rule4_on.txt": (hammer_chain(8), 40.0, 1e-5, True),
    "first_hit_hammer8_rule4_off.txt": (hammer_chain(8), 40.0, 1e-5, False),
}


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for name, (graph, horizon, dt, rule4) in GOLDENS.items():
        dist = first_hit_oracle(graph, horizon=horizon, dt=dt, rule4_enabled=rule4)
        path = DATA_DIR / name
        path.write_text(dist.to_text())
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
