"""Growth-record ingestion and the statistical battery.

One-sample two-tailed t-test with 95% confidence interval, summary
statistics, and the percentage-difference rule used by the companion UI.

The Student-t CDF is built here rather than imported: regularized
incomplete beta via a modified-Lentz continued fraction (good to ~1e-13,
required 1e-8), critical values by bisection on that CDF.  The test suite
checks both against an independent quadrature oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

__all__ = [
    "InsufficientDataError",
    "DegenerateSampleError",
    "UndefinedBaselineError",
    "HeightCsvError",
    "HeightRecord",
    "HeightTable",
    "TTestResult",
    "Summary",
    "student_t_cdf",
    "student_t_critical",
    "regularized_incomplete_beta",
    "summary",
    "one_sample_ttest",
    "pct_diff",
    "load_height_csv",
    "loads_height_csv",
    "dumps_height_csv",
    "bundled_heights_path",
]


class InsufficientDataError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


class UndefinedBaselineError(ValueError):
    pass


class HeightCsvError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.column = column


# ---------------------------------------------------------------------------
# Student-t distribution
# ---------------------------------------------------------------------------

_CF_EPS = 1e-15
_CF_TINY = 1e-300
_CF_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # Continued fraction converges fast on one side of the mean; mirror otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: int) -> float:
    """P(T <= t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def student_t_critical(q: float, df: int, tol: float = 1e-10) -> float:
    """Quantile: the t with CDF(t) = q, by bisection (q in (0.5, 1))."""
    if not 0.5 < q < 1.0:
        raise ValueError("q must be in (0.5, 1)")
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, df) < q:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("quantile bracket blew up")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Summary statistics and the one-sample test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    sd: float | None  # sample sd (n-1 denominator); None when n < 2
    se: float | None


@dataclass(frozen=True)
class TTestResult:
    n: int
    mean: float
    sd: float
    se: float
    test_value: float
    mean_diff: float
    t: float
    df: int
    p_two_tailed: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "se": self.se,
            "test_value": self.test_value,
            "mean_diff": self.mean_diff,
            "t": self.t,
            "df": self.df,
            "p_two_tailed": self.p_two_tailed,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def summary(samples: list[float]) -> Summary:
    if len(samples) == 0:
        raise InsufficientDataError("need at least one sample")
    n = len(samples)
    mean = math.fsum(samples) / n
    if n < 2:
        return Summary(n=n, mean=mean, sd=None, se=None)
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    sd = math.sqrt(var)
    return Summary(n=n, mean=mean, sd=sd, se=sd / math.sqrt(n))


def one_sample_ttest(samples: list[float], test_value: float) -> TTestResult:
    if len(samples) < 2:
        raise InsufficientDataError("one-sample t-test needs n >= 2")
    s = summary(samples)
    assert s.sd is not None and s.se is not None
    if s.sd == 0.0:
        raise DegenerateSampleError("sample variance is zero")
    df = s.n - 1
    mean_diff = s.mean - test_value
    t = mean_diff / s.se
    p = 2.0 * (1.0 - student_t_cdf(abs(t), df))
    half_width = student_t_critical(0.975, df) * s.se
    return TTestResult(
        n=s.n, mean=s.mean, sd=s.sd, se=s.se, test_value=test_value,
        mean_diff=mean_diff, t=t, df=df, p_two_tailed=p,
        ci_low=mean_diff - half_width, ci_high=mean_diff + half_width,
    )


def pct_diff(last_value: float, current_value: float) -> float:
    """Percent change from last to current; undefined for a zero baseline."""
    if last_value == 0:
        raise UndefinedBaselineError("last value is zero")
    return (current_value - last_value) / last_value * 100.0


# ---------------------------------------------------------------------------
# Height-record CSV (sample rows x day columns)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeightRecord:
    sample_id: int
    day_label: str
    height_cm: float


@dataclass(frozen=True)
class HeightTable:
    day_labels: list[str]
    records: list[HeightRecord]

    def day(self, label: str) -> list[float]:
        """Heights for one day column; `label` may be a word-boundary prefix
        such as "Day 29" for "Day 29 6-Feb"."""
        full = self.resolve_day(label)
        return [r.height_cm for r in self.records if r.day_label == full]

    def resolve_day(self, label: str) -> str:
        if label in self.day_labels:
            return label
        matches = [
            d for d in self.day_labels
            if d.startswith(label) and (len(d) == len(label) or d[len(label)] == " ")
        ]
        if len(matches) != 1:
            raise KeyError(label)
        return matches[0]


def _fmt_cell(v: float) -> str:
    return str(int(v)) if v == int(v) else str(v)


def loads_height_csv(text: str) -> HeightTable:
    lines = [ln for ln in text.splitlines()]
    if not lines or not lines[0].strip():
        raise HeightCsvError("empty file")
    header = lines[0].split(",")
    if len(header) < 2 or header[0].strip().lower() != "sample":
        raise HeightCsvError("header must be 'sample,<day labels...>'", row=1)
    day_labels = [h.strip() for h in header[1:]]
    if any(not d for d in day_labels):
        raise HeightCsvError("empty day label in header", row=1)
    records: list[HeightRecord] = []
    for i, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise HeightCsvError(
                f"expected {len(header)} cells, got {len(cells)}", row=i)
        try:
            sample_id = int(cells[0])
        except ValueError:
            raise HeightCsvError(f"bad sample id {cells[0]!r}", row=i, column=1) from None
        for j, cell in enumerate(cells[1:], start=2):
            try:
                h = float(cell)
            except ValueError:
                raise HeightCsvError(f"non-numeric cell {cell!r}", row=i, column=j) from None
            if h <= 0:
                raise HeightCsvError(f"height must be > 0, got {cell}", row=i, column=j)
            records.append(HeightRecord(sample_id=sample_id,
                                        day_label=day_labels[j - 2], height_cm=h))
    if not records:
        raise HeightCsvError("no data rows")
    return HeightTable(day_labels=day_labels, records=records)


def load_height_csv(path) -> HeightTable:
    with open(path, "r", encoding="utf-8") as f:
        return loads_height_csv(f.read())


def dumps_height_csv(table: HeightTable) -> str:
    by_sample: dict[int, dict[str, float]] = {}
    for r in table.records:
        by_sample.setdefault(r.sample_id, {})[r.day_label] = r.height_cm
    out = ["sample," + ",".join(table.day_labels)]
    for sample_id in sorted(by_sample):
        row = by_sample[sample_id]
        cells = [str(sample_id)] + [_fmt_cell(row[d]) for d in table.day_labels]
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def bundled_heights_path():
    """Path to the packaged mustard-greens height record."""
    return resources.files("microfarm").joinpath("data/mustard_heights.csv")
