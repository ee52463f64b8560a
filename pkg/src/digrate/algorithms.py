"""Iteration engines: DIGing, its adapt-then-combine variant, Push-DIGing,
two baselines (distributed gradient descent, subgradient-push), and a
centralized inexact gradient method.

Every step is a pure function from explicit state to the next state; no
randomness lives inside a step, so runs replay bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graphs import DIRECTED, GraphSequence
from .mixing import COLUMN, DOUBLY, MixingMatrix, consensus_violation
from .objectives import ObjectiveSuite, block_gradient, solve_reference
from .traces import RunTrace


class CertificateError(ValueError):
    """A step received a matrix without the stochasticity certificate it needs."""


class PushSumViolation(RuntimeError):
    """Push-sum weights lost positivity or fell under the declared floor,
    which signals a graph sequence violating its connectivity assumptions."""

    def __init__(self, k: int, v: np.ndarray, floor: float | None):
        self.k = k
        self.v_min = float(v.min())
        self.floor = floor
        detail = f"min weight {self.v_min:.3e} at iteration {k}"
        if floor is not None:
            detail += f" (floor {floor:.3e})"
        super().__init__("push-sum weight degenerated: " + detail)


@dataclass(frozen=True)
class DigingState:
    k: int
    x: np.ndarray        # n x p iterates
    y: np.ndarray        # n x p gradient trackers
    grad: np.ndarray     # cached block gradient at x


@dataclass(frozen=True)
class PushDigingState:
    k: int
    u: np.ndarray
    v: np.ndarray        # positive push-sum weights, sum preserved at n
    x: np.ndarray        # readout u / v
    y: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class DgdState:
    k: int
    x: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class SubgradientPushState:
    k: int
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class IgdState:
    k: int
    p: np.ndarray                 # central iterate
    s: np.ndarray                 # n x p evaluation points used at this step
    theta: float


def _require(mat: MixingMatrix, modes: tuple[str, ...]) -> None:
    cert = mat.certificate
    if cert is None or not cert.ok:
        raise CertificateError("mixing matrix carries no valid stochasticity "
                               "certificate")
    if cert.mode not in modes:
        raise CertificateError(f"need a {' or '.join(modes)} stochastic matrix, "
                               f"got {cert.mode}")


def _check_block(x: np.ndarray, suite: ObjectiveSuite) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (suite.n, suite.p):
        raise ValueError(f"iterate block must be {suite.n}x{suite.p}, got {x.shape}")
    return x


def diging_init(suite: ObjectiveSuite, x0: np.ndarray) -> DigingState:
    """Tracker starts at the initial block gradient."""
    x0 = _check_block(x0, suite)
    g = block_gradient(suite, x0)
    return DigingState(0, x0, g.copy(), g)


def diging_step(state: DigingState, w: MixingMatrix, suite: ObjectiveSuite,
                alpha: float) -> DigingState:
    """Mix, descend along the tracker, then refresh the tracker with the
    newest gradient difference."""
    _require(w, (DOUBLY,))
    if alpha <= 0:
        raise ValueError("step size must be positive")
    x1 = w.entries @ state.x - alpha * state.y
    g1 = block_gradient(suite, x1)
    y1 = w.entries @ state.y + g1 - state.grad
    return DigingState(state.k + 1, x1, y1, g1)


def diging_atc_step(state: DigingState, w: MixingMatrix, suite: ObjectiveSuite,
                    alpha: float) -> DigingState:
    """Adapt-then-combine ordering: the local correction is applied before
    neighbor mixing, on both the iterate and the tracker."""
    _require(w, (DOUBLY,))
    if alpha <= 0:
        raise ValueError("step size must be positive")
    x1 = w.entries @ (state.x - alpha * state.y)
    g1 = block_gradient(suite, x1)
    y1 = w.entries @ (state.y + g1 - state.grad)
    return DigingState(state.k + 1, x1, y1, g1)


def push_diging_init(suite: ObjectiveSuite, x0: np.ndarray) -> PushDigingState:
    x0 = _check_block(x0, suite)
    g = block_gradient(suite, x0)
    v = np.ones(suite.n)
    return PushDigingState(0, x0.copy(), v, x0.copy(), g.copy(), g)


def push_diging_step(state: PushDigingState, c: MixingMatrix,
                     suite: ObjectiveSuite, alpha: float,
                     v_floor: float | None = None) -> PushDigingState:
    """Push-sum pairing of a mass iterate u with weights v; the readout
    x = u / v undoes the uneven mass distribution of column stochastic
    mixing. A nonpositive (or under-floor) weight is fatal by design."""
    _require(c, (COLUMN, DOUBLY))
    if alpha <= 0:
        raise ValueError("step size must be positive")
    u1 = c.entries @ (state.u - alpha * state.y)
    v1 = c.entries @ state.v
    if np.any(v1 <= 0) or (v_floor is not None and v1.min() < v_floor):
        raise PushSumViolation(state.k + 1, v1, v_floor)
    x1 = u1 / v1[:, None]
    g1 = block_gradient(suite, x1)
    y1 = c.entries @ state.y + g1 - state.grad
    return PushDigingState(state.k + 1, u1, v1, x1, y1, g1)


def dgd_init(suite: ObjectiveSuite, x0: np.ndarray) -> DgdState:
    x0 = _check_block(x0, suite)
    return DgdState(0, x0, block_gradient(suite, x0))


def dgd_step(state: DgdState, w: MixingMatrix, suite: ObjectiveSuite,
             alpha: float) -> DgdState:
    """Plain distributed gradient descent; with a fixed step it stalls at a
    neighborhood of the solution, which is what the exact methods fix."""
    _require(w, (DOUBLY,))
    x1 = w.entries @ state.x - alpha * state.grad
    return DgdState(state.k + 1, x1, block_gradient(suite, x1))


def subgradient_push_init(suite: ObjectiveSuite, x0: np.ndarray) -> SubgradientPushState:
    x0 = _check_block(x0, suite)
    return SubgradientPushState(0, x0.copy(), np.ones(suite.n), x0.copy(),
                                block_gradient(suite, x0))


def subgradient_push_step(state: SubgradientPushState, c: MixingMatrix,
                          suite: ObjectiveSuite, alpha_k: float,
                          v_floor: float | None = None) -> SubgradientPushState:
    """Diminishing-step baseline: push-sum averaging applied directly to the
    gradient step, no tracker."""
    _require(c, (COLUMN, DOUBLY))
    u1 = c.entries @ (state.u - alpha_k * state.grad)
    v1 = c.entries @ state.v
    if np.any(v1 <= 0) or (v_floor is not None and v1.min() < v_floor):
        raise PushSumViolation(state.k + 1, v1, v_floor)
    x1 = u1 / v1[:, None]
    return SubgradientPushState(state.k + 1, u1, v1, x1, block_gradient(suite, x1))


def sqrt_schedule(a: float) -> Callable[[int], float]:
    """alpha_k = a / sqrt(k+1); iteration indices here start at zero."""
    return lambda k: a / math.sqrt(k + 1)


def radius_perturbation(rho: float) -> Callable[[int, int, int], np.ndarray]:
    """Deterministic offsets of exact norm rho: direction varies with the
    agent and the iteration through an incommensurate angle sweep."""

    def offset(i: int, k: int, p: int) -> np.ndarray:
        t = 0.7548776662 * (i + 1) + 0.5698402910 * k  # plastic-constant angles
        raw = np.cos(t * (1.0 + np.arange(p)) + i)
        nrm = np.linalg.norm(raw)
        if nrm == 0.0:
            raw = np.ones(p)
            nrm = math.sqrt(p)
        return rho * raw / nrm

    return offset


def igd_init(suite: ObjectiveSuite, p0: np.ndarray, theta: float,
             perturbation: Callable[[int, int, int], np.ndarray]) -> IgdState:
    p0 = np.asarray(p0, dtype=float).reshape(suite.p)
    s = np.vstack([p0 + perturbation(i, 0, suite.p) for i in range(suite.n)])
    return IgdState(0, p0, s, theta)


def igd_step(state: IgdState, suite: ObjectiveSuite,
             perturbation: Callable[[int, int, int], np.ndarray]) -> IgdState:
    """Centralized descent along the average of gradients taken at perturbed
    evaluation points s_i instead of the iterate itself."""
    g = np.zeros(suite.p)
    for i, c in enumerate(suite.components):
        g += c.grad(state.s[i])
    p1 = state.p - state.theta * g / suite.n
    k1 = state.k + 1
    s1 = np.vstack([p1 + perturbation(i, k1, suite.p) for i in range(suite.n)])
    return IgdState(k1, p1, s1, state.theta)


@dataclass(frozen=True)
class IgdRun:
    """Distance-to-optimum and perturbation-size series of an inexact run."""

    r: np.ndarray                  # ||p^k - p*|| per iteration
    s_dev: np.ndarray              # n columns: ||p^k - s_i^k|| per iteration
    p_final: np.ndarray


def run_igd(suite: ObjectiveSuite, p0: np.ndarray, theta: float,
            perturbation: Callable[[int, int, int], np.ndarray],
            iterations: int, p_star: np.ndarray | None = None) -> IgdRun:
    if p_star is None:
        p_star = suite.x_star if suite.x_star is not None \
            else solve_reference(suite).x_star
    state = igd_init(suite, p0, theta, perturbation)
    r = [float(np.linalg.norm(state.p - p_star))]
    s_dev = [np.linalg.norm(state.s - state.p, axis=1)]
    for _ in range(iterations):
        state = igd_step(state, suite, perturbation)
        r.append(float(np.linalg.norm(state.p - p_star)))
        s_dev.append(np.linalg.norm(state.s - state.p, axis=1))
    return IgdRun(np.array(r), np.vstack(s_dev), state.p)


@dataclass(frozen=True)
class EquivalentRecursionReport:
    max_state_deviation: float
    max_rowsum_deviation: float


def equivalent_recursion_check(states: list[PushDigingState],
                               mixers: list[MixingMatrix],
                               alpha: float) -> EquivalentRecursionReport:
    """Replay a recorded Push-DIGing run through its weighted row stochastic
    form and report the worst elementwise disagreement.

    The rescaled mixing matrix R(k) = diag(v(k+1))^-1 C(k) diag(v(k)) is row
    stochastic; the readout x and the rescaled tracker h = y / v satisfy the
    same two-recursion shape as the undirected algorithm. Both facts are
    exact algebra, so deviations beyond roundoff indicate a broken run.
    """
    if len(states) < 2:
        raise ValueError("need at least two recorded states")
    if len(mixers) < len(states) - 1:
        raise ValueError("need one mixing matrix per transition")
    max_dev = 0.0
    max_row = 0.0
    for k in range(len(states) - 1):
        s0, s1 = states[k], states[k + 1]
        r = mixers[k].entries * (s0.v[None, :] / s1.v[:, None])
        max_row = max(max_row, float(np.abs(r.sum(axis=1) - 1.0).max()))
        h0 = s0.y / s0.v[:, None]
        x1 = r @ (s0.x - alpha * h0)
        max_dev = max(max_dev, float(np.abs(x1 - s1.x).max()))
        z1 = s1.grad - s0.grad
        h1 = r @ h0 + z1 / s1.v[:, None]
        max_dev = max(max_dev, float(np.abs(h1 - s1.y / s1.v[:, None]).max()))
    return EquivalentRecursionReport(max_dev, max_row)


ALGORITHMS = ("diging", "diging-atc", "push-diging", "dgd", "subgradient-push")


def run(algorithm: str, seq: GraphSequence, rule, suite: ObjectiveSuite,
        alpha, iterations: int, seed: int = 0, x0: np.ndarray | None = None,
        x_star: np.ndarray | None = None, record_audit: bool = False,
        record_states: bool = False, v_floor: float | None = None) -> RunTrace:
    """Drive one algorithm over a graph sequence and record per-iteration
    metrics; deterministic in all inputs.

    `alpha` is a float for fixed-step methods or a callable k -> alpha_k for
    subgradient-push. `rule` maps a snapshot to a MixingMatrix. When `x0` is
    None the run starts from zeros; the string "random" draws a standard
    normal block from `seed`.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    push = algorithm in ("push-diging", "subgradient-push")
    if push and seq.kind != DIRECTED:
        raise ValueError(f"{algorithm} needs a directed graph sequence "
                         "(convert undirected snapshots to arc pairs first)")
    if not push and seq.kind == DIRECTED:
        raise ValueError(f"{algorithm} needs an undirected graph sequence")

    n, p = suite.n, suite.p
    if seq.n != n:
        raise ValueError(f"graph has {seq.n} vertices but suite has {n} agents")
    if isinstance(x0, str) and x0 == "random":
        x0 = np.random.default_rng(seed).normal(size=(n, p))
    elif x0 is None:
        x0 = np.zeros((n, p))
    x0 = np.asarray(x0, dtype=float)

    if x_star is None:
        x_star = suite.x_star
    if x_star is None:
        if suite.L_bar == 0:
            x_star = x0.mean(axis=0)  # consensus run: target is the start average
        else:
            x_star = solve_reference(suite).x_star
    x_star = np.asarray(x_star, dtype=float).reshape(p)

    if algorithm in ("diging", "diging-atc"):
        state = diging_init(suite, x0)
        step = diging_step if algorithm == "diging" else diging_atc_step
    elif algorithm == "push-diging":
        state = push_diging_init(suite, x0)
        step = push_diging_step
    elif algorithm == "dgd":
        state = dgd_init(suite, x0)
        step = dgd_step
    else:
        state = subgradient_push_init(suite, x0)
        step = subgradient_push_step

    r0 = float(np.linalg.norm(x0 - x_star[None, :]))
    rows = {name: [] for name in ("k", "residual", "cons_viol_x", "cons_viol_y",
                                  "conservation_err", "v_min")}
    q_norms, z_norms, grad_norms = [], [], []
    states = [state] if record_states else None
    mixers = [] if record_states else None
    prev_grad = None
    terminated = None

    def record(st):
        nonlocal prev_grad
        q = float(np.linalg.norm(st.x - x_star[None, :]))
        rows["k"].append(st.k)
        rows["residual"].append(q / r0 if r0 > 0 else q)
        rows["cons_viol_x"].append(consensus_violation(st.x))
        if isinstance(st, DigingState):
            rows["cons_viol_y"].append(consensus_violation(st.y))
        elif isinstance(st, PushDigingState):
            rows["cons_viol_y"].append(consensus_violation(st.y / st.v[:, None]))
        else:
            rows["cons_viol_y"].append(float("nan"))
        if isinstance(st, (DigingState, PushDigingState)):
            drift = st.y.sum(axis=0) - st.grad.sum(axis=0)
            rows["conservation_err"].append(float(np.linalg.norm(drift)))
        else:
            rows["conservation_err"].append(float("nan"))
        if isinstance(st, (PushDigingState, SubgradientPushState)):
            rows["v_min"].append(float(st.v.min()))
        else:
            rows["v_min"].append(float("nan"))
        q_norms.append(q)
        z_norms.append(0.0 if prev_grad is None
                       else float(np.linalg.norm(st.grad - prev_grad)))
        grad_norms.append(float(np.linalg.norm(st.grad)))
        prev_grad = st.grad

    record(state)
    for k in range(iterations):
        mat = rule(seq.snapshot(k))
        try:
            if algorithm == "subgradient-push":
                a_k = alpha(k) if callable(alpha) else alpha / math.sqrt(k + 1)
                state = step(state, mat, suite, a_k, v_floor=v_floor)
            elif push:
                state = step(state, mat, suite, alpha, v_floor=v_floor)
            else:
                state = step(state, mat, suite, alpha)
        except PushSumViolation as exc:
            terminated = str(exc)
            break
        if record_states:
            states.append(state)
            mixers.append(mat)
        record(state)

    trace = RunTrace(
        k=np.array(rows["k"], dtype=int),
        residual=np.array(rows["residual"]),
        cons_viol_x=np.array(rows["cons_viol_x"]),
        cons_viol_y=np.array(rows["cons_viol_y"]),
        conservation_err=np.array(rows["conservation_err"]),
        v_min=np.array(rows["v_min"]),
        metadata={
            "algorithm": algorithm,
            "alpha": None if callable(alpha) else float(alpha),
            "iterations": iterations,
            "seed": seed,
            "graph": seq.description,
            "graph_seed": seq.seed,
            "n": n, "p": p,
            "terminated": terminated,
        },
    )
    if record_audit:
        trace.q_norm = np.array(q_norms)
        trace.z_norm = np.array(z_norms)
        trace.grad_norm = np.array(grad_norms)
        trace.xbar0_error = float(np.linalg.norm(x0.mean(axis=0) - x_star))
        trace.r0 = r0
    if record_states:
        trace.history = {"states": states, "mixers": mixers}
    return trace
