"""Regenerate the bundled synthetic scenario under src/agepop/data/synthetic.

The data are smooth, made-up schedules with the rough shape of a developed
country: Gompertz-Makeham mortality, a bell-shaped fertility schedule and a
young-adult migration peak.  Output is deterministic.
"""
import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "agepop" / "data" / "synthetic"
AGES = np.arange(110)


def qx(sex):
    a, b, c = (0.0006, 0.00004, 0.095) if sex == "m" else (0.0004, 0.00002, 0.098)
    q = a + b * np.exp(c * AGES)
    q[0] = 0.006 if sex == "m" else 0.005
    return np.minimum(q, 0.6)


def population(sex):
    base = 2.0e6 * (1.0 - 0.15 * np.tanh((AGES - 55.0) / 12.0))
    survive = np.cumprod(np.concatenate(([1.0], 1.0 - qx(sex)[:-1])))
    return np.round(base * survive)


def fertility():
    ages = np.arange(50)
    rate = 0.11 * np.exp(-0.5 * ((ages - 29.0) / 5.5) ** 2)
    rate[ages < 15] = 0.0
    return np.round(rate, 6)


def migration(sex):
    flow = 4000.0 * np.exp(-0.5 * ((AGES - 27.0) / 8.0) ** 2) - 300.0 * np.exp(-0.5 * ((AGES - 65.0) / 6.0) ** 2)
    scale = 1.0 if sex == "m" else 0.9
    return np.round(scale * flow, 1)


def write(name, header, rows):
    with open(OUT / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write("population.csv", ("sex", "age", "count"),
          [(s, a, f"{v:.0f}") for s in "mf" for a, v in zip(AGES, population(s))])
    write("life_table.csv", ("sex", "age", "qx"),
          [(s, a, f"{v:.6f}") for s in "mf" for a, v in zip(AGES, qx(s))])
    write("fertility.csv", ("age", "rate"), [(a, f"{v:.6f}") for a, v in enumerate(fertility())])
    write("migration.csv", ("sex", "age", "net_per_year"),
          [(s, a, f"{v:.1f}") for s in "mf" for a, v in zip(AGES, migration(s))])
    (OUT / "scenario.ini").write_text(
        "[scenario]\n"
        "population = population.csv\n"
        "life_table = life_table.csv\n"
        "fertility = fertility.csv\n"
        "migration = migration.csv\n"
        "out_dir = output\n"
        "a_dag_m = 110\n"
        "a_dag_f = 110\n"
        "h = 1/12\n"
        "tau = 1/12\n"
        "theta = 0.5\n"
        "horizon = 10\n"
        "sex_ratio = 1.05\n"
        "start_year = 2020\n"
    )


if __name__ == "__main__":
    main()
