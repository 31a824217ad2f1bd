"""Tabular data behind the usual SA plots (no rendering)."""
from __future__ import annotations

import csv
import io

import numpy as np

from .core import InputError
from .sampling import format_float, l2_star_discrepancy, lhs_sample, mc_sample, sobol_sequence


def histogram(Y, bins: int = 30):
    """Return ``(edges, counts)`` of the responses over equal-width bins."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size == 0:
        raise InputError("no responses to summarize")
    if bins < 2:
        raise InputError("need at least two bins")
    counts, edges = np.histogram(Y, bins=bins)
    return edges, counts


def scatter_bins(X, Y, bins: int = 20):
    """Per factor: bin midpoints, mean of Y in each bin and bin counts.

    Bins split each factor's observed range into equal widths; empty bins
    report NaN means.  Returns a list of ``(mids, means, counts)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size == 0:
        raise InputError("no responses to summarize")
    if X.shape[0] != Y.size:
        raise InputError("inputs and responses disagree in length")
    if bins < 2:
        raise InputError("need at least two bins")
    out = []
    for j in range(X.shape[1]):
        lo, hi = X[:, j].min(), X[:, j].max()
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
        k = np.clip(np.searchsorted(edges, X[:, j], side="right") - 1, 0, bins - 1)
        counts = np.bincount(k, minlength=bins)
        # shift by a reference value: exact for constant responses, better conditioned otherwise
        ref = Y[0]
        sums = np.bincount(k, weights=Y - ref, minlength=bins)
        means = np.full(bins, np.nan)
        filled = counts > 0
        means[filled] = ref + sums[filled] / counts[filled]
        out.append((0.5 * (edges[:-1] + edges[1:]), means, counts))
    return out


def discrepancy_compare(n: int = 100, d: int = 2, seeds: int = 50):
    """L2-star discrepancy of MC, LHS and Sobol' designs for seeds ``0..seeds-1``.

    Returns an array with columns ``seed, mc, lhs, sobol``; the Sobol' column
    is constant because the sequence is deterministic.
    """
    sob = l2_star_discrepancy(sobol_sequence(n, d))
    rows = [(s, l2_star_discrepancy(mc_sample(n, d, s)), l2_star_discrepancy(lhs_sample(n, d, s)), sob)
            for s in range(seeds)]
    return np.array(rows, dtype=float)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else format_float(v) for v in r])
    return buf.getvalue()


def histogram_csv(edges, counts) -> str:
    return _csv(["bin_low", "bin_high", "count"],
                [(edges[k], edges[k + 1], int(counts[k])) for k in range(len(counts))])


def scatter_bins_csv(names, binned) -> str:
    rows = []
    for name, (mids, means, counts) in zip(names, binned):
        rows += [(name, mids[k], means[k], int(counts[k])) for k in range(len(mids))]
    return _csv(["parameter", "bin_mid", "mean", "count"], rows)


def discrepancy_csv(table) -> str:
    return _csv(["seed", "mc", "lhs", "sobol"], [(int(r[0]), r[1], r[2], r[3]) for r in table])
