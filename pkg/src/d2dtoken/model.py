"""Problem instance data model and MDP primitives for the token game.

A device alternates between carrying traffic of some type and sitting idle.
Traffic slots offer a binary mode choice (cellular vs. direct D2D, the latter
paid with one token); idle slots offer a binary service choice (accept or
refuse incoming D2D requests, accepting earns one token).  The kernel,
rewards, and enumeration here are the single source of truth for the solver,
the learner, and the simulators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

# Action encoding is state dependent: one binary value covers both regimes.
IDLE = 0  # type index reserved for the idle "traffic type"

CELLULAR = 0  # traffic slot: transmit via the base station
D2D = 1       # traffic slot: request a D2D link (spends a token on success)
ACCEPT = 0    # idle slot: accept D2D requests (earns a token on arrival)
REFUSE = 1    # idle slot: refuse all D2D requests


@dataclass(frozen=True)
class TrafficType:
    """A traffic class; index 0 is always the idle type."""

    index: int
    label: str

    @property
    def is_idle(self) -> bool:
        return self.index == IDLE


@dataclass(frozen=True)
class TrafficModel:
    """Traffic type set with stationary probabilities and per-type benefits.

    ``stationary[i]`` is the probability of type ``i`` arriving in a slot
    (index 0 = idle).  ``benefits[i - 1]`` is the extra utility of a direct
    link for traffic type ``i``; benefits must be strictly increasing with
    the type index.
    """

    types: Tuple[TrafficType, ...]
    stationary: Tuple[float, ...]
    benefits: Tuple[float, ...]

    @property
    def n_traffic_types(self) -> int:
        """Number of non-idle types."""
        return len(self.types) - 1

    def benefit_of(self, type_index: int) -> float:
        if type_index == IDLE:
            raise ValueError("idle type has no direct-link benefit")
        return self.benefits[type_index - 1]

    def label_of(self, type_index: int) -> str:
        return self.types[type_index].label

    def stationary_array(self) -> np.ndarray:
        return np.asarray(self.stationary, dtype=float)


@dataclass(frozen=True)
class EnvFactors:
    """Request/acceptance rates the environment presents to a single device.

    ``p_recv``: chance of receiving at least one D2D request in an idle slot
    spent accepting.  ``q_accept``: chance that the device's own D2D request
    is accepted by some peer.
    """

    p_recv: float
    q_accept: float


@dataclass(frozen=True)
class MdpModel:
    """Complete problem instance: traffic mix, environment, cost, discount, cap."""

    traffic: TrafficModel
    env: EnvFactors
    cost: float
    discount: float
    token_cap: int

    @property
    def n_types(self) -> int:
        """Number of non-idle traffic types."""
        return self.traffic.n_traffic_types

    @property
    def n_states(self) -> int:
        return (self.n_types + 1) * (self.token_cap + 1)


@dataclass(frozen=True, order=True)
class State:
    """Device state: current traffic type index and token count."""

    type_index: int
    tokens: int

    @property
    def is_idle(self) -> bool:
        return self.type_index == IDLE


def make_model(
    benefits: Sequence[float],
    stationary: Sequence[float],
    cost: float,
    discount: float,
    token_cap: int,
    p_recv: float,
    q_accept: float,
    labels: Sequence[str] | None = None,
) -> MdpModel:
    """Assemble an MdpModel from plain values.

    ``stationary`` lists probabilities for the idle type first, then each
    traffic type in benefit order; ``benefits`` lists the non-idle types only.
    """
    n = len(benefits)
    if len(stationary) != n + 1:
        raise ValueError(
            f"stationary needs {n + 1} entries (idle + {n} types), got {len(stationary)}"
        )
    if labels is None:
        labels = [f"s{i}" for i in range(1, n + 1)]
    if len(labels) != n:
        raise ValueError("one label per non-idle type expected")
    types = (TrafficType(0, "idle"),) + tuple(
        TrafficType(i + 1, str(labels[i])) for i in range(n)
    )
    traffic = TrafficModel(
        types=types,
        stationary=tuple(float(x) for x in stationary),
        benefits=tuple(float(b) for b in benefits),
    )
    return MdpModel(
        traffic=traffic,
        env=EnvFactors(p_recv=float(p_recv), q_accept=float(q_accept)),
        cost=float(cost),
        discount=float(discount),
        token_cap=int(token_cap),
    )


def enumerate_states(model: MdpModel) -> List[State]:
    """All states in deterministic order: type index major, token count minor."""
    return [
        State(s, k)
        for s in range(model.n_types + 1)
        for k in range(model.token_cap + 1)
    ]


def state_ordinal(model: MdpModel, state: State) -> int:
    """Position of ``state`` in the enumerate_states order."""
    return state.type_index * (model.token_cap + 1) + state.tokens


def _check_state(model: MdpModel, state: State) -> None:
    if not 0 <= state.tokens <= model.token_cap:
        raise ValueError(f"token count {state.tokens} outside [0, {model.token_cap}]")
    if not 0 <= state.type_index <= model.n_types:
        raise ValueError(f"type index {state.type_index} outside [0, {model.n_types}]")


def _check_action(action: int) -> int:
    if action not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {action!r}")
    return action


def transition_prob(model: MdpModel, from_state: State, action: int, to_state: State) -> float:
    """One-step transition probability between explicit states.

    The kernel is piecewise: the next traffic type is always drawn fresh from
    the stationary mix, while the token count moves by at most one depending
    on the regime (traffic vs. idle), the action, and the environment rates.
    """
    _check_state(model, from_state)
    _check_state(model, to_state)
    a = _check_action(action)
    p = model.env.p_recv
    q = model.env.q_accept
    K = model.token_cap
    s, k = from_state.type_index, from_state.tokens
    ps2 = model.traffic.stationary[to_state.type_index]
    k2 = to_state.tokens

    if s != IDLE:
        if k > 0 and k2 == k:
            # stayed cellular, or tried D2D and was rejected everywhere
            return ps2 * ((1 - a) + a * (1 - q))
        if k > 0 and k2 == k - 1:
            # D2D request accepted: one token spent
            return ps2 * q * a
        if k == 0 and k2 == k:
            # broke: mode choice is moot, tokens stay at zero
            return ps2
        return 0.0
    if k < K:
        if k2 == k:
            # refused, or accepted but nobody asked
            return ps2 * (a + (1 - a) * (1 - p))
        if k2 == k + 1:
            # accepted and served a request: one token earned
            return ps2 * p * (1 - a)
        return 0.0
    # wallet at the cap: token count cannot move
    return ps2 if k2 == k else 0.0


def expected_reward(model: MdpModel, state: State, action: int) -> float:
    """Expected one-slot reward.

    Idle: serving costs ``cost`` and a request arrives with rate ``p_recv``,
    so accepting is worth ``-cost * p_recv``.  Traffic: a D2D attempt pays the
    type benefit exactly when accepted (rate ``q_accept``) and needs a token.
    """
    _check_state(model, state)
    a = _check_action(action)
    if state.is_idle:
        return -model.cost * model.env.p_recv * (1 - a)
    if state.tokens > 0 and a == D2D:
        return model.env.q_accept * model.traffic.benefit_of(state.type_index)
    return 0.0


def successor_distribution(model: MdpModel, state: State, action: int) -> Dict[State, float]:
    """Nonzero-probability successors of ``(state, action)``.

    Probabilities sum to one.  Token count either stays or moves one step,
    so at most ``2 * (n_types + 1)`` successors appear.
    """
    _check_state(model, state)
    a = _check_action(action)
    p = model.env.p_recv
    q = model.env.q_accept
    K = model.token_cap
    k = state.tokens

    # (token outcome, probability of that outcome) for the current regime
    if not state.is_idle:
        if k > 0 and a == D2D:
            outcomes = [(k, 1 - q), (k - 1, q)]
        else:
            outcomes = [(k, 1.0)]
    elif k < K and a == ACCEPT:
        outcomes = [(k, 1 - p), (k + 1, p)]
    else:
        outcomes = [(k, 1.0)]

    dist: Dict[State, float] = {}
    for k2, pk in outcomes:
        if pk == 0.0:
            continue
        for t, pt in enumerate(model.traffic.stationary):
            dist[State(t, k2)] = pt * pk
    return dist


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of checking a model against every type invariant."""

    issues: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __iter__(self) -> Iterator[str]:
        return iter(self.issues)

    def raise_if_invalid(self) -> None:
        if self.issues:
            raise InvalidModelError("; ".join(self.issues))


class InvalidModelError(ValueError):
    """A model instance violates one of its declared invariants."""


PROB_SUM_TOL = 1e-12


def validate(model: MdpModel) -> ValidationReport:
    """Check every invariant of the instance; collects rather than raises."""
    issues: List[str] = []
    tm = model.traffic

    n = tm.n_traffic_types
    if len(tm.stationary) != n + 1:
        issues.append(
            f"stationary has {len(tm.stationary)} entries, expected {n + 1}"
        )
    if len(tm.benefits) != n:
        issues.append(f"benefits has {len(tm.benefits)} entries, expected {n}")
    for i, t in enumerate(tm.types):
        if t.index != i:
            issues.append(f"type at position {i} carries index {t.index}")
    if n < 1:
        issues.append("at least one non-idle traffic type required")

    for i, pr in enumerate(tm.stationary):
        if not 0.0 < pr < 1.0:
            issues.append(f"stationary probability of type {i} is {pr}, not in (0, 1)")
    if abs(sum(tm.stationary) - 1.0) > PROB_SUM_TOL:
        issues.append(
            f"stationary probabilities sum to {sum(tm.stationary)!r}, not 1"
        )

    prev = 0.0
    for i, b in enumerate(tm.benefits, start=1):
        if b <= prev:
            issues.append(
                f"benefits must be strictly positive and increasing; "
                f"b[{i}]={b} after b[{i - 1}]={prev}"
            )
        prev = b

    for name, value in (("p_recv", model.env.p_recv), ("q_accept", model.env.q_accept)):
        if not 0.0 < value < 1.0:
            issues.append(f"{name} is {value}, not in (0, 1)")
    if not 0.0 < model.discount < 1.0:
        issues.append(f"discount is {model.discount}, not in (0, 1)")
    if model.cost < 0.0:
        issues.append(f"cost is {model.cost}, must be >= 0")
    if model.token_cap < 1:
        issues.append(f"token_cap is {model.token_cap}, must be >= 1")

    return ValidationReport(tuple(issues))
