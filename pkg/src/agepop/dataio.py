"""CSV ingestion, grouped-data disaggregation, grid transfer and export.

Counts are converted to densities (persons per year of age) before they
touch the age lattice: a single-year count is the average density over its
one-year cell and is placed at the cell midpoint.  Net migration flows are
handled the same way but may be negative.  Rates and probabilities are
placed at their integer age.  Everything is then interpolated linearly.
"""
from __future__ import annotations

import configparser
import csv
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .core import AgeGrid, LatticeFunction, PopulationState, SexPair
from .errors import ExtrapolationError, InvalidArgument, ParseError

KINDS = ("count", "flow", "rate", "probability")
_PER_CELL = ("count", "flow")
SEX_LABELS = {"m": "m", "f": "f"}


@dataclass(frozen=True)
class AnnualSeries:
    sex: str
    values: np.ndarray
    kind: str = "count"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown series kind {self.kind!r}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise InvalidArgument("annual series must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgument("annual series values must be finite")
        if self.kind == "count" and np.any(vals < 0):
            raise InvalidArgument("counts must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.values.size)

    @property
    def max_age(self) -> int:
        return self.values.size - 1

    def total(self) -> float:
        return float(np.sum(self.values))

    def padded(self, n_ages: int, fill: Optional[float] = None) -> "AnnualSeries":
        """Extend to ``n_ages`` ages with ``fill`` (default: the last value)."""
        if n_ages <= self.values.size:
            return self
        pad = self.values[-1] if fill is None else fill
        extra = np.full(n_ages - self.values.size, float(pad))
        return AnnualSeries(self.sex, np.concatenate((self.values, extra)), self.kind)


@dataclass(frozen=True)
class GroupedSeries:
    """Age bins ``(lo, hi, value)`` with inclusive integer bounds."""

    sex: str
    bins: tuple
    kind: str = "count"

    def __post_init__(self):
        if self.kind not in ("count", "rate"):
            raise InvalidArgument(f"grouped series kind must be 'count' or 'rate', got {self.kind!r}")
        bins = tuple((int(lo), int(hi), float(v)) for lo, hi, v in self.bins)
        if not bins:
            raise InvalidArgument("no bins")
        if bins[0][0] != 0:
            raise InvalidArgument(f"bins must start at age 0, got {bins[0][0]}")
        for (lo0, hi0, _), (lo1, _, _) in zip(bins, bins[1:]):
            if lo1 != hi0 + 1:
                raise InvalidArgument(f"bins are not contiguous at ages {hi0}..{lo1}")
        object.__setattr__(self, "bins", bins)


def _split_exact(total: float, width: int) -> list:
    """``width`` floats equal to ``total / width`` whose exact sum is ``total``."""
    share = total / width
    values = [share] * width
    residual = Fraction(total) - width * Fraction(share)
    if residual:
        last = float(Fraction(share) + residual)
        if Fraction(last) == Fraction(share) + residual:
            values[-1] = last
    return values


def disaggregate(grouped: GroupedSeries) -> AnnualSeries:
    """Spread bins onto single-year ages by bin averaging.

    Count bins are divided evenly over their ages (the last age absorbs the
    sub-ulp remainder so every bin sums exactly to its total); rate bins are
    copied to each age.
    """
    out = []
    for lo, hi, value in grouped.bins:
        width = hi - lo + 1
        if width <= 0:
            raise InvalidArgument(f"bin ({lo}, {hi}) has zero width")
        if grouped.kind == "count":
            out.extend(_split_exact(value, width))
        else:
            out.extend([value] * width)
    return AnnualSeries(grouped.sex, np.array(out), grouped.kind)


def interpolate_to_grid(series: AnnualSeries, grid: AgeGrid) -> LatticeFunction:
    """Piecewise-linear transfer of single-year data onto the age lattice.

    Rates and probabilities sit at integer ages; counts and flows become
    densities at cell midpoints.  Values are held constant beyond the
    outermost sample, at most half a year (counts) or one year (rates) past
    the data.
    """
    top = series.max_age + 1
    if grid.a_dag > top + 1e-9 * top:
        raise ExtrapolationError(
            f"grid reaches age {grid.a_dag:g} but {series.sex!r} data stop at age {series.max_age} "
            f"(covering up to {top})"
        )
    positions = series.ages + (0.5 if series.kind in _PER_CELL else 0.0)
    values = np.interp(grid.nodes, positions, series.values)
    return LatticeFunction(grid, values)


def cells_per_year(grid: AgeGrid) -> int:
    k = int(round(1.0 / grid.h))
    if k < 1 or not math.isclose(k * grid.h, 1.0, rel_tol=1e-9):
        raise InvalidArgument(f"age step {grid.h!r} does not divide one year")
    return k


def restrict_to_annual(state: PopulationState) -> SexPair:
    """Integrate the density over each one-year age cell (trapezoid rule)."""
    if state.units != "natural":
        raise InvalidArgument("annual restriction needs a state in natural units")
    out = []
    for sex, grid in state.grids.items():
        k = cells_per_year(grid)
        years = int(round(grid.a_dag))
        if years * k != grid.n:
            raise InvalidArgument(f"{sex}: a_dag={grid.a_dag!r} is not a whole number of years")
        p = state.full(sex)
        weights = np.ones(k + 1)
        weights[0] = weights[-1] = 0.5
        cells = np.lib.stride_tricks.sliding_window_view(p, k + 1)[::k]
        out.append(AnnualSeries(sex, grid.h * (cells @ weights), "count"))
    return SexPair(*out)


# --- CSV loading -----------------------------------------------------------


def _read_rows(path, header):
    path = Path(path)
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, None, f"cannot open: {exc.strerror or exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(path, 1, "empty file, header row required") from None
        if [c.strip() for c in first] != list(header):
            raise ParseError(path, 1, f"expected header {','.join(header)!r}, got {','.join(first)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _number(path, lineno, text, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"{what} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, lineno, f"{what} must be finite")
    return value


def _age(path, lineno, text):
    try:
        age = int(text)
    except ValueError:
        raise ParseError(path, lineno, f"age must be an integer, got {text!r}") from None
    if age < 0:
        raise ParseError(path, lineno, f"negative age {age}")
    return age


def _sex(path, lineno, text):
    label = text.lower()
    if label not in SEX_LABELS:
        raise ParseError(path, lineno, f"unknown sex label {text!r} (expected m or f)")
    return SEX_LABELS[label]


def _assemble(path, rows_by_sex, kind, sexes=("m", "f")) -> dict:
    """Check ages are contiguous from 0 and build one series per sex."""
    out = {}
    for sex in sexes:
        rows = rows_by_sex.get(sex, {})
        if not rows:
            raise ParseError(path, None, f"no rows for sex {sex!r}")
        expected = 0
        for age in sorted(rows):
            if age != expected:
                raise ParseError(path, rows[age][0], f"sex {sex!r}: ages jump from {expected - 1} to {age}; missing age {expected}")
            expected += 1
        out[sex] = AnnualSeries(sex, np.array([rows[a][1] for a in sorted(rows)]), kind)
    return out


def _collect(path, header, value_check, with_sex=True):
    rows_by_sex = {}
    for lineno, row in _read_rows(path, header):
        if with_sex:
            sex, age_text, value_text = row
            sex = _sex(path, lineno, sex)
        else:
            sex, (age_text, value_text) = "f", row
        age = _age(path, lineno, age_text)
        value = _number(path, lineno, value_text, header[-1])
        value_check(path, lineno, value)
        bucket = rows_by_sex.setdefault(sex, {})
        if age in bucket:
            raise ParseError(path, lineno, f"duplicate age {age} for sex {sex!r}")
        bucket[age] = (lineno, value)
    return rows_by_sex


def _nonnegative(path, lineno, value):
    if value < 0:
        raise ParseError(path, lineno, f"negative value {value!r}")


def _probability(path, lineno, value):
    if not 0.0 <= value < 1.0:
        raise ParseError(path, lineno, f"qx must lie in [0, 1), got {value!r}")


def load_population(path) -> SexPair:
    """``sex,age,count`` rows to a pair of single-year count series."""
    rows = _collect(path, ("sex", "age", "count"), _nonnegative)
    out = _assemble(path, rows, "count")
    return SexPair(out["m"], out["f"])


def load_life_table(path) -> SexPair:
    """``sex,age,qx`` rows; annual death probabilities per single-year age."""
    rows = _collect(path, ("sex", "age", "qx"), _probability)
    out = _assemble(path, rows, "probability")
    return SexPair(out["m"], out["f"])


def load_migration(path) -> SexPair:
    """``sex,age,net_per_year`` rows; signed net immigration per year by age."""
    rows = _collect(path, ("sex", "age", "net_per_year"), lambda *a: None)
    out = _assemble(path, rows, "flow")
    return SexPair(out["m"], out["f"])


@dataclass(frozen=True)
class FertilitySchedule:
    """Birth rates by age of mother, with their split by sex of the newborn."""

    total: AnnualSeries
    sex_ratio: float

    @property
    def male_births(self) -> AnnualSeries:
        s = self.sex_ratio
        return AnnualSeries("f", s / (1.0 + s) * self.total.values, "rate")

    @property
    def female_births(self) -> AnnualSeries:
        s = self.sex_ratio
        return AnnualSeries("f", 1.0 / (1.0 + s) * self.total.values, "rate")


def load_fertility(path, sex_ratio: float = 1.05) -> FertilitySchedule:
    """``age,rate`` rows: births per woman-year by age of mother."""
    if not sex_ratio > 0:
        raise InvalidArgument(f"sex ratio must be positive, got {sex_ratio!r}")
    rows = _collect(path, ("age", "rate"), _nonnegative, with_sex=False)
    out = _assemble(path, rows, "rate", sexes=("f",))
    return FertilitySchedule(out["f"], float(sex_ratio))


# --- scenario configuration -------------------------------------------------

CONFIG_KEYS = (
    "a_dag_m", "a_dag_f", "h", "tau", "theta", "horizon", "sex_ratio",
    "population", "life_table", "fertility", "migration", "out_dir",
)
PATH_KEYS = ("population", "life_table", "fertility", "migration", "out_dir")


@dataclass(frozen=True)
class ScenarioConfig:
    population: Path
    life_table: Path
    fertility: Path
    migration: Path
    out_dir: Path
    a_dag_m: float = 110.0
    a_dag_f: float = 110.0
    h: float = 1.0 / 12.0
    tau: float = 1.0 / 12.0
    theta: float = 0.5
    horizon: float = 10.0
    sex_ratio: float = 1.05
    start_year: int = 0

    def __post_init__(self):
        for name in ("a_dag_m", "a_dag_f", "h", "tau", "horizon", "sex_ratio"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidArgument(f"{name} must be positive, got {value!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgument(f"theta must lie in [0, 1], got {self.theta!r}")

    def replace(self, **changes) -> "ScenarioConfig":
        fields = {k: v for k, v in self.__dict__.items()}
        fields.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioConfig(**fields)


def _parse_fraction(text: str) -> float:
    """Accept plain numbers and simple ratios such as ``1/12``."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def load_config(path) -> ScenarioConfig:
    """Read an INI-style ``key = value`` file; a section header is optional.

    Relative paths are resolved against the directory of the config file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(path, None, f"cannot read config: {exc.strerror or exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not text.lstrip().startswith("["):
        text = "[scenario]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(path, None, str(exc)) from exc
    section = parser[parser.sections()[0]]
    missing = [k for k in PATH_KEYS if k not in section]
    if missing:
        raise ParseError(path, None, f"missing keys: {', '.join(missing)}")
    unknown = sorted(set(section) - set(CONFIG_KEYS) - {"start_year"})
    if unknown:
        raise ParseError(path, None, f"unknown keys: {', '.join(unknown)}")
    kwargs = {k: (path.parent / section[k]).resolve() for k in PATH_KEYS}
    for key in ("a_dag_m", "a_dag_f", "h", "tau", "theta", "horizon", "sex_ratio"):
        if key in section:
            try:
                kwargs[key] = _parse_fraction(section[key])
            except (ValueError, ZeroDivisionError):
                raise ParseError(path, None, f"{key} is not a number: {section[key]!r}") from None
    if "start_year" in section:
        kwargs["start_year"] = int(section["start_year"])
    return ScenarioConfig(**kwargs)


# --- export -----------------------------------------------------------------


@dataclass
class ProjectionOutput:
    """Annual snapshots of a run in natural units plus per-step diagnostics."""

    years: list = field(default_factory=list)
    populations: list = field(default_factory=list)
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    births: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_population_csv(path, population: SexPair) -> None:
    rows = []
    for sex, series in population.items():
        rows.extend((sex, age, _fmt(v)) for age, v in zip(series.ages, series.values))
    _write_csv(Path(path), ("sex", "age", "count"), rows)


def _write_outputs(output: ProjectionOutput, target: Path) -> None:
    summary = []
    for year, pop in zip(output.years, output.populations):
        write_population_csv(target / f"population_{year}.csv", pop)
        male, female = pop.male.values, pop.female.values
        n = max(male.size, female.size)
        pyramid = [
            (age, _fmt(-male[age] if age < male.size else 0.0), _fmt(female[age] if age < female.size else 0.0))
            for age in range(n)
        ]
        _write_csv(target / f"pyramid_{year}.csv", ("age", "male", "female"), pyramid)
        tm, tf = math.fsum(male), math.fsum(female)
        summary.append((year, _fmt(tm), _fmt(tf), _fmt(tm + tf)))
    _write_csv(target / "summary.csv", ("year", "male", "female", "total"), summary)
    if output.years:
        diag = [
            (_fmt(t), _fmt(e), _fmt(b[0]), _fmt(b[1]))
            for t, e, b in zip(output.times, output.energy, output.births)
        ]
        _write_csv(target / "diagnostics.csv", ("t", "energy", "births_m", "births_f"), diag)


def export_results(output: ProjectionOutput, out_dir) -> list:
    """Write the result file set into ``out_dir`` atomically.

    Files are staged in a sibling temporary directory that replaces
    ``out_dir`` only once every file has been written.
    """
    out_dir = Path(out_dir)
    parent = out_dir.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=parent))
    try:
        _write_outputs(output, staging)
        backup = None
        if out_dir.exists():
            backup = parent / f".{out_dir.name}.old.{os.getpid()}"
            os.replace(out_dir, backup)
        os.replace(staging, out_dir)
        if backup is not None:
            shutil.rmtree(backup, ignore_errors=True)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return sorted(p.name for p in out_dir.iterdir())


def read_summary(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            (int(r["year"]), float(r["male"]), float(r["female"]), float(r["total"]))
            for r in csv.DictReader(fh)
        ]
