"""Optimal-policy machinery: value iteration, exact evaluation, oracles,
threshold extraction, and the structural checks (one-shot deviation,
concavity in the token count, threshold monotonicity).

The Bellman backup is phrased through the expected next-slot value at each
token level, ``avg(k) = sum_s p(s) V(s, k)``: a traffic slot spends a token
exactly when the immediate gain beats the discounted marginal token value
``beta * (avg(k) - avg(k-1))``, and an idle slot accepts exactly when the
marginal value of the token it would earn beats the expected service cost.
Ties go to action 0 within an absolute tolerance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import (
    ACCEPT,
    CELLULAR,
    D2D,
    IDLE,
    REFUSE,
    InvalidModelError,
    MdpModel,
    State,
    enumerate_states,
    expected_reward,
    state_ordinal,
    successor_distribution,
    validate,
)

# Absolute tolerance for the tie-to-action-0 rule in the backup comparisons.
TIE_TOL = 1e-12

FREE = -1  # marker in an action-constraint table for "solver's choice"


class SolverError(Exception):
    """Base class for solver failures."""


class ConvergenceError(SolverError):
    """Value iteration hit the iteration cap; carries the last iterate."""

    def __init__(self, message: str, value_function: "ValueFunction", policy: "Policy", iterations: int):
        super().__init__(message)
        self.value_function = value_function
        self.policy = policy
        self.iterations = iterations


class InstanceTooLargeError(SolverError):
    """Brute-force enumeration was asked for too many free states."""


class NotThresholdError(SolverError):
    """A policy row switches from act back to wait as tokens grow."""

    def __init__(self, type_index: int, tokens: int):
        super().__init__(
            f"policy for type {type_index} takes action 1 at {tokens} tokens "
            f"but action 0 at {tokens + 1}"
        )
        self.type_index = type_index
        self.tokens = tokens


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Expected discounted utility per state, as a (types x token levels) table."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _frozen(np.asarray(self.table, dtype=float)))

    @classmethod
    def zeros(cls, model: MdpModel) -> "ValueFunction":
        return cls(np.zeros((model.n_types + 1, model.token_cap + 1)))

    def value(self, state: State) -> float:
        return float(self.table[state.type_index, state.tokens])

    def items(self, model: MdpModel) -> Iterable[Tuple[State, float]]:
        for s in enumerate_states(model):
            yield s, self.value(s)

    def equals(self, other: "ValueFunction", tol: float = 0.0) -> bool:
        if tol == 0.0:
            return np.array_equal(self.table, other.table)
        return bool(np.max(np.abs(self.table - other.table)) <= tol)


@dataclass(frozen=True, eq=False)
class Policy:
    """Action table over states; meaning of 1 is regime dependent (D2D / refuse)."""

    actions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actions", _frozen(np.asarray(self.actions, dtype=np.int8)))

    @classmethod
    def never_act(cls, model: MdpModel) -> "Policy":
        """Cellular everywhere, refuse everywhere: the all-zero-reward policy."""
        acts = np.zeros((model.n_types + 1, model.token_cap + 1), dtype=np.int8)
        acts[IDLE, :] = REFUSE
        return cls(acts)

    def action(self, state: State) -> int:
        return int(self.actions[state.type_index, state.tokens])

    def equals(self, other: "Policy") -> bool:
        return np.array_equal(self.actions, other.actions)

    def forced_assignment_violations(self, model: MdpModel) -> List[State]:
        """States where the policy breaks a forced assignment."""
        bad = [
            State(s, 0)
            for s in range(1, model.n_types + 1)
            if self.actions[s, 0] != CELLULAR
        ]
        if self.actions[IDLE, model.token_cap] != REFUSE:
            bad.append(State(IDLE, model.token_cap))
        return bad


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule for value iteration."""

    epsilon: float = 1e-9
    max_iterations: int = 100_000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def value_bound(model: MdpModel) -> float:
    """Sup-norm bound on any value function of the instance."""
    worst = max(max(model.traffic.benefits), model.cost * model.env.p_recv)
    return worst / (1.0 - model.discount)


def _arrays(model: MdpModel):
    probs = model.traffic.stationary_array()
    bens = np.asarray(model.traffic.benefits, dtype=float)
    return probs, bens, model.env.p_recv, model.env.q_accept, model.cost, model.discount, model.token_cap


def _backup(
    v: np.ndarray,
    probs: np.ndarray,
    bens: np.ndarray,
    p: float,
    q: float,
    c: float,
    beta: float,
    K: int,
    fixed: Optional[np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    """One Bellman sweep on raw arrays; returns (new values, greedy actions)."""
    avg = probs @ v                      # expected next-slot value per token level
    margin = beta * np.diff(avg)         # margin[k-1] = beta * (avg[k] - avg[k-1])

    spend = margin[None, :] < bens[:, None] - TIE_TOL      # traffic rows, k >= 1
    refuse = margin < c - TIE_TOL                          # idle row, k < K
    if fixed is not None:
        spend = np.where(fixed[1:, 1:] == FREE, spend, fixed[1:, 1:] == 1)
        refuse = np.where(fixed[IDLE, :K] == FREE, refuse, fixed[IDLE, :K] == 1)

    wait = beta * avg
    v_new = np.empty_like(v)
    v_new[1:, 0] = wait[0]
    spend_val = q * bens[:, None] + beta * ((1 - q) * avg[None, 1:] + q * avg[None, :-1])
    v_new[1:, 1:] = np.where(spend, spend_val, wait[None, 1:])
    accept_val = -c * p + beta * ((1 - p) * avg[:-1] + p * avg[1:])
    v_new[IDLE, :K] = np.where(refuse, wait[:K], accept_val)
    v_new[IDLE, K] = wait[K]

    act = np.zeros_like(v, dtype=np.int8)
    act[1:, 1:] = spend
    act[IDLE, :K] = refuse
    act[IDLE, K] = REFUSE  # full wallet: serving could never be paid
    return v_new, act


def bellman_backup(model: MdpModel, v: ValueFunction) -> Tuple[ValueFunction, Policy]:
    """One-step Bellman improvement of ``v`` and the greedy policy achieving it."""
    probs, bens, p, q, c, beta, K = _arrays(model)
    v_new, act = _backup(np.array(v.table), probs, bens, p, q, c, beta, K, None)
    return ValueFunction(v_new), Policy(act)


IterateCallback = Callable[[int, np.ndarray, np.ndarray], None]


def value_iteration(
    model: MdpModel,
    cfg: SolverConfig = SolverConfig(),
    fixed_actions: Optional[np.ndarray] = None,
    on_iterate: Optional[IterateCallback] = None,
) -> Tuple[ValueFunction, Policy, int]:
    """Iterate Bellman backups from all-zero values to the stopping tolerance.

    ``fixed_actions`` pins selected entries of the policy (FREE leaves an entry
    to the solver); this also serves restricted problems such as the greedy
    baseline.  ``on_iterate(n, values, actions)`` observes every iterate.
    Raises ConvergenceError (carrying the last iterate) at the iteration cap.
    """
    report = validate(model)
    if not report.ok:
        raise InvalidModelError("; ".join(report.issues))
    probs, bens, p, q, c, beta, K = _arrays(model)
    if fixed_actions is not None:
        fixed_actions = np.asarray(fixed_actions, dtype=np.int8)
    v = np.zeros((model.n_types + 1, K + 1))
    for n in range(1, cfg.max_iterations + 1):
        v_new, act = _backup(v, probs, bens, p, q, c, beta, K, fixed_actions)
        if on_iterate is not None:
            on_iterate(n, v_new, act)
        gap = float(np.max(np.abs(v_new - v)))
        v = v_new
        if gap < cfg.epsilon:
            return ValueFunction(v), Policy(act), n
    raise ConvergenceError(
        f"no convergence to {cfg.epsilon} within {cfg.max_iterations} iterations "
        f"(last sup-norm step {gap:.3e})",
        ValueFunction(v),
        Policy(act),
        cfg.max_iterations,
    )


def _kernel_tensors(model: MdpModel) -> Tuple[np.ndarray, np.ndarray]:
    """Dense per-action transition matrices P[a, i, j] and rewards R[a, i]."""
    n = model.n_states
    P = np.zeros((2, n, n))
    R = np.zeros((2, n))
    for st in enumerate_states(model):
        i = state_ordinal(model, st)
        for a in (0, 1):
            R[a, i] = expected_reward(model, st, a)
            for nxt, pr in successor_distribution(model, st, a).items():
                P[a, i, state_ordinal(model, nxt)] = pr
    return P, R


def _solve_policy(model: MdpModel, P: np.ndarray, R: np.ndarray, acts: np.ndarray) -> np.ndarray:
    idx = np.arange(model.n_states)
    P_pi = P[acts, idx, :]
    r_pi = R[acts, idx]
    A = np.eye(model.n_states) - model.discount * P_pi
    try:
        return np.linalg.solve(A, r_pi)
    except np.linalg.LinAlgError as exc:  # cannot happen for discount < 1
        raise SolverError(f"singular policy-evaluation system: {exc}") from exc


def evaluate_policy_exact(model: MdpModel, policy: Policy) -> ValueFunction:
    """Fixed point of the policy's evaluation equations, via a linear solve."""
    P, R = _kernel_tensors(model)
    acts = policy.actions.reshape(-1).astype(np.intp)
    v = _solve_policy(model, P, R, acts)
    return ValueFunction(v.reshape(model.n_types + 1, model.token_cap + 1))


def forced_action_table(model: MdpModel) -> np.ndarray:
    """Constraint table with only the forced assignments pinned."""
    fixed = np.full((model.n_types + 1, model.token_cap + 1), FREE, dtype=np.int8)
    fixed[1:, 0] = CELLULAR
    fixed[IDLE, model.token_cap] = REFUSE
    return fixed


MAX_FREE_STATES = 16


def brute_force_optimal(
    model: MdpModel,
    fixed_actions: Optional[np.ndarray] = None,
    max_free_states: int = MAX_FREE_STATES,
) -> Tuple[ValueFunction, Policy]:
    """Exhaustive policy enumeration; the independent optimality oracle.

    Every deterministic stationary policy respecting the forced assignments
    (and any extra pins in ``fixed_actions``) is evaluated exactly; the best
    is returned after asserting that one policy dominates at every state
    simultaneously.
    """
    fixed = forced_action_table(model)
    if fixed_actions is not None:
        pinned = np.asarray(fixed_actions, dtype=np.int8)
        fixed = np.where(pinned == FREE, fixed, pinned)
        # physics still pins the regime-degenerate states
        fixed[1:, 0] = CELLULAR
        fixed[IDLE, model.token_cap] = REFUSE
    flat_fixed = fixed.reshape(-1)
    free_idx = np.flatnonzero(flat_fixed == FREE)
    if len(free_idx) > max_free_states:
        raise InstanceTooLargeError(
            f"{len(free_idx)} free states would need 2**{len(free_idx)} policies "
            f"(cap {max_free_states})"
        )

    P, R = _kernel_tensors(model)
    template = np.where(flat_fixed == FREE, 0, flat_fixed).astype(np.intp)

    best_v: Optional[np.ndarray] = None
    best_acts: Optional[np.ndarray] = None
    pointwise_max = np.full(model.n_states, -np.inf)
    for bits in itertools.product((0, 1), repeat=len(free_idx)):
        acts = template.copy()
        acts[free_idx] = bits
        v = _solve_policy(model, P, R, acts)
        np.maximum(pointwise_max, v, out=pointwise_max)
        if best_v is None or v.sum() > best_v.sum():
            best_v, best_acts = v, acts

    assert best_v is not None
    slack = float(np.max(pointwise_max - best_v))
    if slack > 1e-9:
        raise SolverError(
            f"no single enumerated policy dominates everywhere (gap {slack:.3e}); "
            f"this contradicts MDP theory and indicates a kernel bug"
        )
    shape = (model.n_types + 1, model.token_cap + 1)
    return ValueFunction(best_v.reshape(shape)), Policy(best_acts.reshape(shape))


@dataclass(frozen=True)
class ThresholdTable:
    """Per-type token cutoffs: action 1 exactly at or above the cutoff.

    ``token_cap + 1`` encodes a row that never takes action 1.  Index 0 is
    the idle type, where action 1 means refusing service.
    """

    thresholds: Tuple[int, ...]
    token_cap: int

    def threshold(self, type_index: int) -> int:
        return self.thresholds[type_index]

    @property
    def never(self) -> int:
        return self.token_cap + 1

    def to_policy(self) -> Policy:
        K = self.token_cap
        acts = np.zeros((len(self.thresholds), K + 1), dtype=np.int8)
        for s, th in enumerate(self.thresholds):
            if th <= K:
                acts[s, th:] = 1
        return Policy(acts)


def extract_thresholds(model: MdpModel, policy: Policy) -> ThresholdTable:
    """Read the per-type cutoffs off a policy table.

    Raises NotThresholdError if any row takes action 1 and later action 0 as
    the token count grows (a structural violation worth failing loudly on).
    """
    K = model.token_cap
    cutoffs: List[int] = []
    for s in range(model.n_types + 1):
        row = policy.actions[s]
        ones = np.flatnonzero(row == 1)
        first = int(ones[0]) if len(ones) else K + 1
        drop = np.flatnonzero((row[:-1] == 1) & (row[1:] == 0))
        if len(drop):
            raise NotThresholdError(s, int(drop[0]))
        cutoffs.append(first)
    return ThresholdTable(tuple(cutoffs), K)


@dataclass(frozen=True)
class DeviationViolation:
    state: State
    action: int
    opportunity_cost: float
    immediate_gain: float

    @property
    def slack(self) -> float:
        return self.opportunity_cost - self.immediate_gain


@dataclass(frozen=True)
class DeviationReport:
    """One-shot-deviation audit of a policy against its own value function."""

    violations: Tuple[DeviationViolation, ...]
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations


def check_one_shot_deviation(
    model: MdpModel,
    v: ValueFunction,
    policy: Policy,
    tol: float = 1e-8,
) -> DeviationReport:
    """Verify that every chosen action survives the one-step comparison.

    At a traffic state the policy should wait exactly when the discounted
    marginal token value covers the immediate gain; at an idle state it
    should accept exactly when the marginal value of the earned token covers
    the expected cost.  States with a forced action are skipped.
    """
    probs, bens, p, q, c, beta, K = _arrays(model)
    avg = probs @ v.table
    margin = beta * np.diff(avg)  # margin[k-1] at token level k

    bad: List[DeviationViolation] = []
    for s in range(1, model.n_types + 1):
        for k in range(1, K + 1):
            lhs, rhs = float(margin[k - 1]), float(bens[s - 1])
            a = int(policy.actions[s, k])
            if a == CELLULAR and lhs < rhs - tol:
                bad.append(DeviationViolation(State(s, k), a, lhs, rhs))
            elif a == D2D and lhs > rhs + tol:
                bad.append(DeviationViolation(State(s, k), a, lhs, rhs))
    for k in range(K):
        lhs = float(margin[k])  # marginal value of moving k -> k+1
        a = int(policy.actions[IDLE, k])
        if a == ACCEPT and lhs < c - tol:
            bad.append(DeviationViolation(State(IDLE, k), a, lhs, c))
        elif a == REFUSE and lhs > c + tol:
            bad.append(DeviationViolation(State(IDLE, k), a, lhs, c))
    return DeviationReport(tuple(bad), tol)


@dataclass(frozen=True)
class ConcavityReport:
    """Diminishing-marginal-token audit of a value table."""

    max_violation: float
    worst_state: Optional[State]
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tolerance


def check_concavity(v: ValueFunction, tol: float = 1e-9) -> ConcavityReport:
    """Assert each extra token is worth no more than the previous one."""
    return _concavity_of(v.table, tol)


def _concavity_of(table: np.ndarray, tol: float) -> ConcavityReport:
    if table.shape[1] < 3:
        return ConcavityReport(0.0, None, tol)
    diff = np.diff(table, axis=1)
    excess = diff[:, 1:] - diff[:, :-1]  # > 0 where the margin grows
    worst = float(excess.max())
    if worst <= 0.0:
        return ConcavityReport(max(worst, 0.0), None, tol)
    s, k = np.unravel_index(int(excess.argmax()), excess.shape)
    return ConcavityReport(worst, State(int(s), int(k) + 1), tol)


def check_monotone_tokens(v: ValueFunction, tol: float = 1e-9) -> bool:
    """More tokens never hurt: values non-decreasing along each row."""
    return bool(np.all(np.diff(v.table, axis=1) >= -tol))


SWEEPABLE = ("beta", "p", "q", "c")  # plus b1..bN for single-type benefits


def apply_parameter(model: MdpModel, parameter: str, value: float) -> MdpModel:
    """New instance with one scalar replaced; benefit slots via 'b<i>'."""
    if parameter in ("beta", "discount"):
        return replace(model, discount=float(value))
    if parameter in ("p", "p_recv"):
        return replace(model, env=replace(model.env, p_recv=float(value)))
    if parameter in ("q", "q_accept"):
        return replace(model, env=replace(model.env, q_accept=float(value)))
    if parameter in ("c", "cost"):
        return replace(model, cost=float(value))
    if parameter.startswith("b"):
        try:
            i = int(parameter[1:])
        except ValueError:
            raise ValueError(f"unknown sweep parameter {parameter!r}") from None
        if not 1 <= i <= model.n_types:
            raise ValueError(f"benefit index in {parameter!r} outside 1..{model.n_types}")
        bens = list(model.traffic.benefits)
        bens[i - 1] = float(value)
        return replace(model, traffic=replace(model.traffic, benefits=tuple(bens)))
    raise ValueError(f"unknown sweep parameter {parameter!r}")


@dataclass(frozen=True)
class SweepPoint:
    value: float
    thresholds: Optional[ThresholdTable]
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepResult:
    parameter: str
    points: Tuple[SweepPoint, ...]

    @property
    def ok(self) -> bool:
        return all(p.error is None for p in self.points)


def sweep(
    model: MdpModel,
    parameter: str,
    grid: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
) -> SweepResult:
    """Solve the instance across a parameter grid and tabulate the cutoffs.

    Per-point failures (invalid instance, non-convergence, non-threshold
    policy) are recorded on the point; the sweep itself keeps going.
    """
    points: List[SweepPoint] = []
    for value in grid:
        try:
            m = apply_parameter(model, parameter, value)
            _, policy, _ = value_iteration(m, cfg)
            points.append(SweepPoint(float(value), extract_thresholds(m, policy)))
        except (InvalidModelError, SolverError, ValueError) as exc:
            points.append(SweepPoint(float(value), None, error=str(exc)))
    return SweepResult(parameter, tuple(points))


# Expected direction of the per-type cutoffs along each swept parameter,
# for non-idle types: +1 non-decreasing, -1 non-increasing.
TREND_DIRECTIONS = {"beta": +1, "p": -1, "q": +1}


@dataclass(frozen=True)
class TrendVerdict:
    type_index: int
    monotone: bool
    strict_somewhere: bool


def threshold_trends(result: SweepResult, direction: int) -> List[TrendVerdict]:
    """Check each non-idle type's cutoff sequence against a direction."""
    solved = [p for p in result.points if p.thresholds is not None]
    verdicts: List[TrendVerdict] = []
    if not solved:
        return verdicts
    n_types = len(solved[0].thresholds.thresholds) - 1
    for s in range(1, n_types + 1):
        seq = [p.thresholds.threshold(s) for p in solved]
        steps = [direction * (b - a) for a, b in zip(seq, seq[1:])]
        verdicts.append(
            TrendVerdict(s, all(d >= 0 for d in steps), any(d > 0 for d in steps))
        )
    return verdicts


class ValueIterationSolver(BaseEstimator):
    """Estimator-style front end to value iteration.

    Parameters
    ----------
    epsilon : float
        Sup-norm stopping tolerance on successive value iterates.
    max_iterations : int
        Iteration cap; exceeding it raises ConvergenceError from fit.

    Attributes
    ----------
    value_ : ValueFunction
    policy_ : Policy
    thresholds_ : ThresholdTable
    n_iter_ : int
    model_ : MdpModel
    """

    def __init__(self, epsilon: float = 1e-9, max_iterations: int = 100_000):
        self.epsilon = epsilon
        self.max_iterations = max_iterations

    def fit(self, model: MdpModel, on_iterate: Optional[IterateCallback] = None):
        cfg = SolverConfig(epsilon=self.epsilon, max_iterations=self.max_iterations)
        value, policy, n_iter = value_iteration(model, cfg, on_iterate=on_iterate)
        self.model_ = model
        self.value_ = value
        self.policy_ = policy
        self.thresholds_ = extract_thresholds(model, policy)
        self.n_iter_ = n_iter
        return self

    def predict(self, states: Iterable[State]) -> np.ndarray:
        """Greedy action for each state."""
        check_is_fitted(self, "policy_")
        return np.asarray([self.policy_.action(s) for s in states], dtype=np.int8)
