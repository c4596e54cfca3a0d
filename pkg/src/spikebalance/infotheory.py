"""Binned entropy and mutual information, plus the t-tests used on MI tables.

All estimators are plug-in (no bias correction). Sums go through
:func:`math.fsum`, which makes every quantity independent of the order in
which symbols are enumerated: MI is exactly symmetric, exactly invariant
under relabeling, and ``MI(a, a)`` equals ``H(a)`` bit for bit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EncodingError, SchemaError
from .trace import ELEMENT_CLASSES, ENV_VARIABLES, NETWORK_ELEMENTS

DEFAULT_BIN_WIDTH = 0.01
POOLED = "pooled"


@dataclass(frozen=True)
class BinnedSeries:
    symbols: np.ndarray
    width: float = DEFAULT_BIN_WIDTH
    origin: float = 0.0

    def __len__(self):
        return len(self.symbols)


def bin_series(values, width=DEFAULT_BIN_WIDTH, origin=0.0):
    """Symbolize ``values`` as ``floor((value - origin) / width)``."""
    if not width > 0:
        raise EncodingError(f"bin width must be > 0, got {width}")
    values = np.asarray(values, dtype=float).ravel()
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise EncodingError(f"non-finite value {values[bad[0]]!r} at index {bad[0]}")
    symbols = np.floor((values - origin) / width).astype(np.int64)
    return BinnedSeries(symbols, float(width), float(origin))


@dataclass(frozen=True)
class JointDistribution:
    """Sparse contingency table of two symbol sequences."""

    pairs: np.ndarray       # (k, 2) distinct symbol pairs
    counts: np.ndarray      # (k,) occurrences of each pair
    a_symbols: np.ndarray
    a_counts: np.ndarray
    b_symbols: np.ndarray
    b_counts: np.ndarray
    total: int
    a_index: np.ndarray     # (k,) position of each pair's first symbol in a_symbols
    b_index: np.ndarray     # (k,) position of each pair's second symbol in b_symbols

    @property
    def probabilities(self):
        return self.counts / self.total


def _as_symbols(x):
    if isinstance(x, BinnedSeries):
        return x.symbols
    return np.asarray(x, dtype=np.int64).ravel()


def joint_distribution(a, b):
    sa, sb = _as_symbols(a), _as_symbols(b)
    if len(sa) != len(sb):
        raise EncodingError(f"length mismatch: {len(sa)} vs {len(sb)}")
    if len(sa) == 0:
        raise EncodingError("series must be non-empty")
    if isinstance(a, BinnedSeries) and isinstance(b, BinnedSeries):
        if (a.width, a.origin) != (b.width, b.origin):
            raise EncodingError("joint operations need identical bin width and origin")
    ua, ia, ca = np.unique(sa, return_inverse=True, return_counts=True)
    ub, ib, cb = np.unique(sb, return_inverse=True, return_counts=True)
    code = ia.astype(np.int64) * len(ub) + ib
    uc, cc = np.unique(code, return_counts=True)
    ja, jb = uc // len(ub), uc % len(ub)
    pairs = np.column_stack([ua[ja], ub[jb]])
    return JointDistribution(pairs, cc, ua, ca, ub, cb, len(sa), ja, jb)


def _log(base):
    if base == 2:
        return math.log2
    if base == "e" or base == math.e:
        return math.log
    return lambda x: math.log(x, base)


def entropy(a, base=2):
    counts = np.unique(_as_symbols(a), return_counts=True)[1]
    n = int(counts.sum())
    if n == 0:
        raise EncodingError("series must be non-empty")
    log = _log(base)
    return math.fsum((int(c) / n) * log(n / int(c)) for c in counts)


def mutual_information(a, b, base=2):
    """Plug-in mutual information between two symbol sequences."""
    jd = joint_distribution(a, b)
    return _mi_from_joint(jd, base)


def _mi_from_joint(jd, base=2):
    n = jd.total
    log = _log(base)
    na = jd.a_counts[jd.a_index]
    nb = jd.b_counts[jd.b_index]
    terms = []
    for nab, x, y in zip(jd.counts.tolist(), na.tolist(), nb.tolist()):
        # integer numerator and denominator: a single rounding per ratio
        terms.append((nab / n) * log((nab * n) / (x * y)))
    return max(0.0, math.fsum(terms))


# --------------------------------------------------------------------------
# MI tables
# --------------------------------------------------------------------------

AGGREGATORS = {"max": max, "mean": lambda xs: math.fsum(xs) / len(xs)}


class MIMatrix:
    """MI (in bits by default) keyed by ``(element, variable, trial)``.

    ``trial`` is an integer trial index or :data:`POOLED`. Element names are
    trace channels (``V1``, ``R2``...) or class summaries (``V``, ``R``...).
    """

    def __init__(self, values, trials, aggregator="max"):
        self.values = dict(values)
        self.trials = list(trials)
        self.aggregator = aggregator

    def __getitem__(self, key):
        return self.values[key]

    def get(self, element, variable, trial=POOLED):
        return self.values[(element, variable, trial)]

    def per_trial(self, element, variable):
        return [self.values[(element, variable, t)] for t in self.trials]

    def rows(self):
        """Long-format rows in a fixed, reproducible order."""
        elements = list(NETWORK_ELEMENTS) + list(ELEMENT_CLASSES)
        out = []
        for trial in self.trials + [POOLED]:
            for element in elements:
                for var in ENV_VARIABLES:
                    key = (element, var, trial)
                    if key in self.values:
                        out.append((element, var, trial, self.values[key]))
        return out


def _trace_mi(columns, width, base):
    """MI of every network element about every environment variable."""
    env = {var: bin_series(columns[var], width) for var in ENV_VARIABLES}
    out = {}
    for element in NETWORK_ELEMENTS:
        sym = bin_series(columns[element], width)
        for var in ENV_VARIABLES:
            out[(element, var)] = mutual_information(sym, env[var], base)
    return out


def _check_schema(trace, index):
    for ch in ENV_VARIABLES + NETWORK_ELEMENTS:
        if ch not in trace.columns:
            raise SchemaError(f"trace {index} is missing channel {ch!r}")


def mi_matrix(traces, width=DEFAULT_BIN_WIDTH, aggregator="max", base=2):
    """Per-trial and pooled MI tables for a set of traces.

    Pooled entries bin the concatenation of raw values across all traces.
    """
    traces = list(traces)
    if not traces:
        raise SchemaError("mi_matrix needs at least one trace")
    for i, tr in enumerate(traces):
        _check_schema(tr, i)
    try:
        agg = AGGREGATORS[aggregator]
    except KeyError:
        raise EncodingError(f"unknown aggregator {aggregator!r}") from None

    values = {}
    per = [_trace_mi(tr.columns, width, base) for tr in traces]
    pooled_cols = {ch: np.concatenate([tr.columns[ch] for tr in traces])
                   for ch in ENV_VARIABLES + NETWORK_ELEMENTS}
    tables = list(enumerate(per)) + [(POOLED, _trace_mi(pooled_cols, width, base))]
    for trial, table in tables:
        for (element, var), mi in table.items():
            values[(element, var, trial)] = mi
        for cls, members in ELEMENT_CLASSES.items():
            for var in ENV_VARIABLES:
                values[(cls, var, trial)] = agg([table[(m, var)] for m in members])
    return MIMatrix(values, range(len(traces)), aggregator)


# --------------------------------------------------------------------------
# Student t tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    degenerate: bool = False


def _betacf(a, b, x, max_iter=500, eps=1e-16):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a, b, x, y=None):
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1.

    ``y`` may carry ``1 - x`` computed without cancellation.
    """
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if y is None:
        y = 1.0 - x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(y))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_two_tailed(t, df):
    """Two-tailed p-value ``P(|T| >= |t|)`` for Student's t with ``df`` dof."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 == 0.0:
        return 1.0
    if df > t2:
        # P = 1 - I_{t2/(df+t2)}(1/2, df/2) keeps precision for small |t|
        return 1.0 - regularized_incomplete_beta(0.5, df / 2.0, t2 / (df + t2), df / (df + t2))
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def _sample_t(d, mu0):
    d = [float(v) for v in d]
    n = len(d)
    if n < 2:
        raise ValueError(f"t test needs at least 2 samples, got {n}")
    mean = math.fsum(d) / n
    var = math.fsum((v - mean) ** 2 for v in d) / (n - 1)
    diff = mean - mu0
    df = n - 1
    if var == 0.0:
        warnings.warn("zero-variance sample: t statistic undefined", RuntimeWarning, stacklevel=3)
        if diff == 0.0:
            return TTestResult(0.0, df, 1.0, True)
        return TTestResult(math.copysign(math.inf, diff), df, 0.0, True)
    t = diff / (math.sqrt(var) / math.sqrt(n))
    return TTestResult(t, df, student_t_two_tailed(t, df))


def paired_t_test(x, y):
    """Paired-samples t test on ``x - y``."""
    x = list(x)
    y = list(y)
    if len(x) != len(y):
        raise ValueError(f"paired samples differ in length: {len(x)} vs {len(y)}")
    return _sample_t([a - b for a, b in zip(x, y)], 0.0)


def one_sample_t_test(x, mu0):
    return _sample_t(list(x), float(mu0))
