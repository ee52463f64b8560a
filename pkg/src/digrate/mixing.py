"""Mixing-matrix construction and consensus-contraction measurement.

Doubly stochastic rules (Metropolis, lazy Metropolis) serve undirected
snapshots; the out-degree rule builds column stochastic matrices for
directed snapshots. Contraction is measured as the largest singular value
of the windowed product minus the uniform averaging matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import DIRECTED, UNDIRECTED, GraphSequence, GraphSnapshot

DOUBLY = "doubly"
COLUMN = "column"

STOCHASTICITY_TOL = 1e-12


class PowerIterationError(RuntimeError):
    """Spectral estimate failed to settle within the iteration cap."""

    def __init__(self, message: str, last_estimate: float):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass(frozen=True)
class StochasticityReport:
    """Certificate (ok=True) or violation report for row/column sums."""

    mode: str
    ok: bool
    max_deviation: float
    first_offender: tuple[str, int, float] | None = None  # (axis, index, deviation)
    violations: tuple[tuple[str, int, float], ...] = ()


@dataclass(frozen=True)
class MixingMatrix:
    n: int
    entries: np.ndarray
    rule: str
    snapshot: GraphSnapshot | None = None
    certificate: StochasticityReport | None = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.n, self.n):
            raise ValueError(f"entries must be {self.n}x{self.n}, got {e.shape}")
        if np.any(e < 0):
            raise ValueError("mixing weights must be nonnegative")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)


@dataclass(frozen=True)
class ContractionEstimate:
    """Finite-horizon supremum of the windowed consensus-contraction factor."""

    B: int
    horizon: int
    delta_empirical: float
    per_window: tuple[tuple[int, float], ...]  # (k, sigma_max of window ending at k)


def metropolis(snapshot: GraphSnapshot) -> MixingMatrix:
    """Metropolis weights: 1/(1+max(d_i,d_j)) on edges, diagonal completing
    each row to 1. Doubly stochastic; every nonzero entry is >= 1/n."""
    if snapshot.kind != UNDIRECTED:
        raise ValueError("Metropolis weights need an undirected snapshot")
    n = snapshot.n
    d = snapshot.degrees()
    w = np.zeros((n, n))
    for a, b in snapshot.links:
        v = 1.0 / (1 + max(d[a - 1], d[b - 1]))
        w[a - 1, b - 1] = v
        w[b - 1, a - 1] = v
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return MixingMatrix(n, w, "metropolis", snapshot, validate_stochasticity(w, DOUBLY))


def lazy_metropolis(snapshot: GraphSnapshot) -> MixingMatrix:
    """Half-weight Metropolis variant: 1/(2 max(d_i,d_j)) on edges, so the
    diagonal stays at least 1/2."""
    if snapshot.kind != UNDIRECTED:
        raise ValueError("lazy Metropolis weights need an undirected snapshot")
    n = snapshot.n
    d = snapshot.degrees()
    w = np.zeros((n, n))
    for a, b in snapshot.links:
        v = 1.0 / (2 * max(d[a - 1], d[b - 1]))
        w[a - 1, b - 1] = v
        w[b - 1, a - 1] = v
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return MixingMatrix(n, w, "lazy-metropolis", snapshot,
                        validate_stochasticity(w, DOUBLY))


def out_degree_column(snapshot: GraphSnapshot) -> MixingMatrix:
    """Column stochastic push-sum weights: column j holds 1/(out-degree + 1)
    on the diagonal (implicit self-arc) and on every arc j -> i."""
    if snapshot.kind != DIRECTED:
        raise ValueError("out-degree weights need a directed snapshot")
    n = snapshot.n
    share = 1.0 / (snapshot.out_degrees() + 1)
    c = np.zeros((n, n))
    np.fill_diagonal(c, share)
    for j, i in snapshot.links:
        c[i - 1, j - 1] = share[j - 1]
    return MixingMatrix(n, c, "out-degree-column", snapshot,
                        validate_stochasticity(c, COLUMN))


def custom_mixing(entries: np.ndarray, mode: str,
                  snapshot: GraphSnapshot | None = None) -> MixingMatrix:
    """Wrap an externally supplied matrix, validating the requested
    stochasticity; raises if the certificate fails."""
    entries = np.asarray(entries, dtype=float)
    n = entries.shape[0]
    report = validate_stochasticity(entries, mode)
    if not report.ok:
        axis, idx, dev = report.first_offender
        raise ValueError(f"custom matrix is not {mode} stochastic: "
                         f"{axis} {idx} off by {dev:.3e}")
    return MixingMatrix(n, entries, "custom", snapshot, report)


def validate_stochasticity(matrix: np.ndarray | MixingMatrix, mode: str,
                           tol: float = STOCHASTICITY_TOL) -> StochasticityReport:
    """Check row sums (doubly), column sums (both modes) against 1 within
    `tol` absolute, reporting the worst deviation and each offender."""
    if isinstance(matrix, MixingMatrix):
        matrix = matrix.entries
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("stochasticity check needs a square matrix")
    if mode not in (DOUBLY, COLUMN):
        raise ValueError(f"unknown stochasticity mode {mode!r}")
    checks = [("col", m.sum(axis=0))]
    if mode == DOUBLY:
        checks.insert(0, ("row", m.sum(axis=1)))
    violations = []
    max_dev = 0.0
    first = None
    for axis, sums in checks:
        dev = np.abs(sums - 1.0)
        max_dev = max(max_dev, float(dev.max()))
        for idx in np.nonzero(dev > tol)[0]:
            entry = (axis, int(idx) + 1, float(dev[idx]))
            violations.append(entry)
            if first is None:
                first = entry
    if np.any(m < 0):
        idx = int(np.argmin(m.min(axis=1)))
        entry = ("negative-row", idx + 1, float(-m.min()))
        violations.append(entry)
        first = first or entry
        max_dev = max(max_dev, float(-m.min()))
    return StochasticityReport(mode, not violations, max_dev, first, tuple(violations))


def averaging_gap(matrix: np.ndarray) -> np.ndarray:
    """The matrix minus uniform averaging, (1/n) * ones."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    return m - np.full((n, n), 1.0 / n)


def spectral_deviation(matrix: np.ndarray | MixingMatrix, rtol: float = 1e-12,
                       max_iter: int = 100_000) -> float:
    """Largest singular value of (matrix - uniform averaging).

    Power iteration on A^T A with a deterministic start vector (all ones
    plus an index-proportional perturbation, so it is never trapped in the
    null space of a doubly stochastic deviation). Raises
    PowerIterationError, carrying the last estimate, if the relative change
    does not fall below `rtol` within `max_iter` sweeps.
    """
    if isinstance(matrix, MixingMatrix):
        matrix = matrix.entries
    a = averaging_gap(matrix)
    n = a.shape[0]
    if n == 1:
        return float(abs(a[0, 0]))
    scale = float(np.abs(a).max())
    if scale == 0.0:
        return 0.0
    v = 1.0 + np.arange(1, n + 1) / n
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = a @ v
        u = a.T @ w
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start vector fell entirely into the null space; the deviation
            # along it is exactly zero
            return 0.0
        new_sigma = float(np.sqrt(w @ w))  # ||A v|| with unit v
        v = u / nu
        if abs(new_sigma - sigma) <= rtol * max(new_sigma, np.finfo(float).tiny):
            return new_sigma
        sigma = new_sigma
    raise PowerIterationError(
        f"power iteration did not settle to rtol={rtol:g} in {max_iter} sweeps",
        last_estimate=sigma)


def window_product(seq: GraphSequence, rule, k: int, B: int) -> np.ndarray:
    """Product W(k) W(k-1) ... W(k-B+1) of per-snapshot mixing matrices."""
    if k < B - 1:
        raise ValueError("window extends before iteration 0")
    prod = rule(seq.snapshot(k)).entries.copy()
    for t in range(k - 1, k - B, -1):
        prod = prod @ rule(seq.snapshot(t)).entries
    return prod


def estimate_delta(seq: GraphSequence, rule, B: int, horizon: int) -> ContractionEstimate:
    """Supremum of spectral_deviation over all length-B windows whose
    snapshots lie in [0, horizon). A finite-horizon stand-in for the
    all-time supremum; exact for periodic sequences once the horizon covers
    a full period."""
    if B < 1:
        raise ValueError("window length must be >= 1")
    if horizon < B:
        raise ValueError("horizon must cover at least one window")
    per_window = []
    for k in range(B - 1, horizon):
        per_window.append((k, spectral_deviation(window_product(seq, rule, k, B))))
    delta = max(v for _, v in per_window)
    return ContractionEstimate(B, horizon, delta, tuple(per_window))


def consensus_violation(x: np.ndarray) -> float:
    """Frobenius distance of the stacked iterate to the consensus subspace."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return float(np.linalg.norm(x - x.mean(axis=0, keepdims=True)))


def matrix_to_csv(matrix: np.ndarray | MixingMatrix) -> str:
    """Dense CSV dump, row-major, 17 significant digits."""
    if isinstance(matrix, MixingMatrix):
        matrix = matrix.entries
    return "\n".join(",".join(f"{v:.17g}" for v in row) for row in matrix) + "\n"


def matrix_from_csv(text: str) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")]
            for line in text.strip().splitlines() if line.strip()]
    return np.array(rows, dtype=float)
