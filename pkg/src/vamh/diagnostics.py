"""Autocorrelation diagnostics for scalar chain output."""

from __future__ import annotations

import csv
import json

import numpy as np

from .errors import ConfigurationError, DomainError

DEFAULT_WINDOW = (1001, 2000)


def autocovariance(x, max_lag: int) -> np.ndarray:
    """gamma(k) = n^-1 sum_t (x_t - xbar)(x_{t+k} - xbar) for k = 0..max_lag, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag < 0 or n <= max_lag:
        raise ConfigurationError(f"need trace length > max_lag, got n={n}, max_lag={max_lag}")
    xc = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return acov / n


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation rho(k) = gamma(k) / gamma(0), k = 0..max_lag."""
    g = autocovariance(x, max_lag)
    if not g[0] > 0:
        raise DomainError("autocorrelation is undefined for a constant trace")
    return g / g[0]


def integrated_autocorr_time(x, c: float = 5.0, max_lag: int | None = None) -> float:
    """tau = 1 + 2 sum_{k=1}^{M} rho(k) with the automatic window M = min{M : M >= c tau(M)}."""
    x = np.asarray(x, dtype=float)
    if max_lag is None:
        max_lag = min(x.size - 1, max(1000, x.size // 10))
    rho = acf(x, max_lag)
    taus = 2.0 * np.cumsum(rho) - 1.0
    ok = np.arange(taus.size) >= c * taus
    if not ok.any():
        return float(taus[-1])
    return float(taus[np.argmax(ok)])


def effective_sample_size(x, c: float = 5.0) -> float:
    return np.asarray(x).size / integrated_autocorr_time(x, c)


def write_acf_csv(path, rho, header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["lag", "acf"])
        for k, v in enumerate(rho):
            w.writerow([k, repr(float(v))])


def export_trace_and_acf(g, max_lag: int, acf_path, trace_path=None, window=DEFAULT_WINDOW,
                         header: dict | None = None) -> np.ndarray:
    """Write ``lag,acf`` for the whole trace and ``step,g`` for steps window[0]..window[1]."""
    rho = acf(g, max_lag)
    write_acf_csv(acf_path, rho, header)
    if trace_path is not None:
        lo, hi = window
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad window {window}")
        g = np.asarray(g, dtype=float)
        with open(trace_path, "w", newline="") as fh:
            if header is not None:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["step", "g"])
            for step in range(lo, min(hi, g.size) + 1):
                w.writerow([step, repr(float(g[step - 1]))])
    return rho


def read_trace_column(path, column: str = "g") -> np.ndarray:
    """Read one column of a CSV written by this package, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        if rows.fieldnames is None or column not in rows.fieldnames:
            raise ConfigurationError(f"{path} has no column {column!r}")
        return np.array([float(r[column]) for r in rows])
