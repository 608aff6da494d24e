"""Evaluation reports and the rank test used to compare them."""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cloth import ParameterError

EXACT_LIMIT = 12  # combined sample size at which enumeration hands over


class SampleError(ParameterError):
    """A sample handed to the rank test is empty or malformed."""
REPORT_HEADER = "# eval report v1"
REPORT_COLUMNS = ("fabric", "d0", "d1", "d_sum", "success", "steps")
AGGREGATE_KEYS = ("mean_d0", "std_d0", "mean_d1", "std_d1",
                  "mean_d_sum", "std_d_sum", "success_rate")


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..N with tied values sharing the mean of their rank block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks: np.ndarray, n_a: int, u_obs: float) -> float:
    offset = n_a * (n_a + 1) / 2.0
    count_le = count_ge = total = 0
    for combo in itertools.combinations(range(len(ranks)), n_a):
        u = sum(ranks[i] for i in combo) - offset
        total += 1
        if u <= u_obs + 1e-9:
            count_le += 1
        if u >= u_obs - 1e-9:
            count_ge += 1
    return min(1.0, 2.0 * min(count_le, count_ge) / total)


def _approx_p(pooled: np.ndarray, n_a: int, n_b: int, u_obs: float) -> float:
    n = n_a + n_b
    mu = n_a * n_b / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float((counts.astype(float) ** 3 - counts).sum()) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(0.0, (abs(u_obs - mu) - 0.5) / math.sqrt(var))
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def mann_whitney_u(sample_a, sample_b, method: str = "auto") -> tuple:
    """Two-sided Mann-Whitney U test; returns (U of sample_a, p-value).

    U comes from rank sums with midrank ties. The p-value enumerates the
    exact permutation distribution when the combined size is at most
    EXACT_LIMIT, and otherwise uses the normal approximation with tie and
    continuity corrections. method forces "exact" or "approx".
    """
    a = np.asarray([float(x) for x in sample_a])
    b = np.asarray([float(x) for x in sample_b])
    if a.size == 0 or b.size == 0:
        raise SampleError("both samples must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SampleError("samples must be finite")
    if method not in ("auto", "exact", "approx"):
        raise SampleError(f"unknown method {method!r}")
    n_a, n_b = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_obs = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2.0
    if method == "exact" or (method == "auto" and n_a + n_b <= EXACT_LIMIT):
        p = _exact_p(ranks, n_a, u_obs)
    else:
        p = _approx_p(pooled, n_a, n_b, u_obs)
    return u_obs, p


@dataclass(frozen=True)
class EvalRow:
    """End-of-episode metrics for one evaluation rollout."""

    fabric: int
    d0: float
    d1: float
    d_sum: float
    success: bool
    steps: int


@dataclass(frozen=True)
class EvalReport:
    """Evaluation rollout metrics plus aggregates recomputable from the rows."""

    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        for row in self.rows:
            if not isinstance(row, EvalRow):
                raise ParameterError(f"rows must be EvalRow, got {type(row)}")

    def column(self, name: str) -> list:
        if name not in ("d0", "d1", "d_sum", "success", "steps", "fabric"):
            raise ParameterError(f"unknown column {name!r}")
        return [getattr(row, name) for row in self.rows]

    def aggregates(self) -> dict:
        """Means, population stds, and the success rate; None when undefined."""
        if not self.rows:
            return {key: None for key in AGGREGATE_KEYS}
        out = {}
        for name in ("d0", "d1", "d_sum"):
            values = np.asarray(self.column(name))
            out[f"mean_{name}"] = float(values.mean())
            out[f"std_{name}"] = float(values.std())
        out["success_rate"] = float(np.mean([r.success for r in self.rows]))
        return out


def save_report(report: EvalReport, path) -> None:
    lines = [REPORT_HEADER, f"episodes = {len(report.rows)}",
             "columns = " + " ".join(REPORT_COLUMNS)]
    for row in report.rows:
        lines.append(" ".join([str(row.fabric), repr(row.d0), repr(row.d1),
                               repr(row.d_sum), str(int(row.success)),
                               str(row.steps)]))
    for key, value in report.aggregates().items():
        lines.append(f"{key} = {'undefined' if value is None else repr(value)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_row(line: str, lineno: int) -> EvalRow:
    parts = line.split()
    if len(parts) != len(REPORT_COLUMNS):
        raise ParameterError(f"line {lineno}: expected {len(REPORT_COLUMNS)} "
                             f"fields, got {len(parts)}")
    try:
        return EvalRow(fabric=int(parts[0]), d0=float(parts[1]),
                       d1=float(parts[2]), d_sum=float(parts[3]),
                       success=bool(int(parts[4])), steps=int(parts[5]))
    except ValueError as err:
        raise ParameterError(f"line {lineno}: {err}") from err


def load_report(path) -> EvalReport:
    """Parse a report and verify its stored aggregates against the rows."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ParameterError(f"not an eval report: {path}")
    rows, stored = [], {}
    episodes = None
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "episodes":
                episodes = int(value)
            elif key in AGGREGATE_KEYS:
                stored[key] = None if value == "undefined" else float(value)
            elif key != "columns":
                raise ParameterError(f"line {lineno}: unknown key {key!r}")
        else:
            rows.append(_parse_row(line, lineno))
    report = EvalReport(tuple(rows))
    if episodes != len(rows):
        raise ParameterError(f"report declares {episodes} episodes "
                             f"but has {len(rows)} rows")
    if stored != report.aggregates():
        raise ParameterError("stored aggregates do not match the rows")
    return report
