"""Monte-Carlo simulation of a single device against the parametric environment.

The solver works with expected rewards; the simulator samples outcomes from
the same kernel so traces exhibit real variance.  A mode-selection slot that
chose the direct link is logged as accepted or rejected (the kernel merges
the rejected case with the cellular choice, the log keeps them apart).
"""

from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .model import ACCEPT, CELLULAR, D2D, IDLE, REFUSE, MdpModel, State
from .solver import (
    FREE,
    Policy,
    SolverConfig,
    forced_action_table,
    value_iteration,
)

EVENT_NONE = 0
EVENT_REQUEST_ACCEPTED = 1  # own D2D request served: token spent, benefit earned
EVENT_REQUEST_REJECTED = 2  # own D2D request refused everywhere: cellular fallback
EVENT_REQUEST_RECEIVED = 3  # served an incoming request: cost paid, token earned

EVENT_NAMES = {
    EVENT_NONE: "none",
    EVENT_REQUEST_ACCEPTED: "request-accepted",
    EVENT_REQUEST_REJECTED: "request-rejected",
    EVENT_REQUEST_RECEIVED: "request-received",
}


@dataclass(frozen=True)
class SimConfig:
    """Horizon, seed, and starting wallet of a simulation run.

    ``initial_tokens`` defaults to half the cap (rounded down).  A fixed
    ``initial_type`` pins the first slot's traffic type; by default it is
    drawn from the stationary mix like every other slot.
    """

    slots: int
    rng_seed: int = 0
    initial_tokens: Optional[int] = None
    initial_type: Optional[int] = None

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("slots must be >= 1")

    def start_tokens(self, model: MdpModel) -> int:
        k0 = self.initial_tokens if self.initial_tokens is not None else model.token_cap // 2
        if not 0 <= k0 <= model.token_cap:
            raise ValueError(f"initial_tokens {k0} outside [0, {model.token_cap}]")
        return k0


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Per-slot record of one run plus its exact aggregates."""

    types: np.ndarray        # traffic type index per slot
    tokens: np.ndarray       # wallet at the start of each slot
    actions: np.ndarray
    events: np.ndarray
    rewards: np.ndarray
    token_delta: np.ndarray
    discount: float
    rng_seed: int

    @property
    def slots(self) -> int:
        return len(self.rewards)

    @property
    def average_utility(self) -> float:
        return float(self.rewards.mean())

    @property
    def discounted_utility(self) -> float:
        with np.errstate(under="ignore"):
            weights = np.power(self.discount, np.arange(self.slots, dtype=float))
        return float(weights @ self.rewards)

    @property
    def earn_count(self) -> int:
        return int(np.sum(self.token_delta == 1))

    def spend_counts(self) -> Dict[int, int]:
        """Tokens spent per traffic type (successful direct transmissions)."""
        spent = self.events == EVENT_REQUEST_ACCEPTED
        counts: Dict[int, int] = {}
        for t in np.unique(self.types[spent]):
            counts[int(t)] = int(np.sum(spent & (self.types == t)))
        return counts

    def spend_shares(self, n_types: int) -> np.ndarray:
        """Fraction of all spent tokens per non-idle type (index 1..n)."""
        counts = self.spend_counts()
        total = sum(counts.values())
        shares = np.zeros(n_types)
        if total:
            for t, c in counts.items():
                shares[t - 1] = c / total
        return shares


def _cumulative(model: MdpModel) -> list:
    return np.cumsum(model.traffic.stationary_array()).tolist()


def _draw_types(model: MdpModel, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(model.traffic.stationary_array())
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, model.n_types).astype(np.int16)


def step_single(
    model: MdpModel,
    state: State,
    policy: Policy,
    rng: random.Random,
) -> Tuple[State, float, int]:
    """Sample one slot: environment outcome, reward, and the fresh next type."""
    a = policy.action(state)
    k = state.tokens
    reward, event = 0.0, EVENT_NONE
    if not state.is_idle:
        if a == D2D and k > 0:
            if rng.random() < model.env.q_accept:
                reward = model.traffic.benefit_of(state.type_index)
                k -= 1
                event = EVENT_REQUEST_ACCEPTED
            else:
                event = EVENT_REQUEST_REJECTED
    elif a == ACCEPT:
        if rng.random() < model.env.p_recv:
            reward = -model.cost
            event = EVENT_REQUEST_RECEIVED
            if k < model.token_cap:  # a transfer into a full wallet is lost
                k += 1
    cum = _cumulative(model)
    next_type = min(bisect_right(cum, rng.random()), model.n_types)
    return State(next_type, k), reward, event


def run_single(model: MdpModel, policy: Policy, cfg: SimConfig) -> SimTrace:
    """Simulate ``cfg.slots`` slots under a fixed policy, deterministically per seed.

    Two uniforms are consumed per slot (type draw, environment draw) whether
    or not the slot uses them, so runs with the same seed see the same random
    world under different policies (common random numbers).
    """
    rng = np.random.default_rng(cfg.rng_seed)
    n_slots = cfg.slots
    u_type = rng.random(n_slots)
    u_env = rng.random(n_slots)
    types = _draw_types(model, u_type)
    if cfg.initial_type is not None:
        if not 0 <= cfg.initial_type <= model.n_types:
            raise ValueError(f"initial_type {cfg.initial_type} unknown")
        types[0] = cfg.initial_type

    p = model.env.p_recv
    q = model.env.q_accept
    c = model.cost
    K = model.token_cap
    bens = [0.0] + list(model.traffic.benefits)
    pol = policy.actions.tolist()
    types_l = types.tolist()
    u_env_l = u_env.tolist()

    k = cfg.start_tokens(model)
    tokens = np.empty(n_slots, dtype=np.int16)
    actions = np.empty(n_slots, dtype=np.int8)
    events = np.zeros(n_slots, dtype=np.int8)
    rewards = np.zeros(n_slots)
    deltas = np.zeros(n_slots, dtype=np.int8)

    for t in range(n_slots):
        s = types_l[t]
        a = pol[s][k]
        tokens[t] = k
        actions[t] = a
        if s != IDLE:
            if a == D2D and k > 0:
                if u_env_l[t] < q:
                    rewards[t] = bens[s]
                    events[t] = EVENT_REQUEST_ACCEPTED
                    deltas[t] = -1
                    k -= 1
                else:
                    events[t] = EVENT_REQUEST_REJECTED
        elif a == ACCEPT:
            if u_env_l[t] < p:
                rewards[t] = -c
                events[t] = EVENT_REQUEST_RECEIVED
                if k < K:
                    deltas[t] = 1
                    k += 1

    return SimTrace(
        types=types,
        tokens=tokens,
        actions=actions,
        events=events,
        rewards=rewards,
        token_delta=deltas,
        discount=model.discount,
        rng_seed=cfg.rng_seed,
    )


def build_greedy_policy(model: MdpModel, cfg: SolverConfig = SolverConfig()) -> Policy:
    """Spend-whenever-possible baseline with an optimized collection rule.

    Direct mode is pinned at every traffic state with tokens; the idle-slot
    accept/refuse rule is then solved to optimality for the pinned problem.
    """
    fixed = forced_action_table(model)
    fixed[1:, 1:] = D2D
    fixed[IDLE, : model.token_cap] = FREE
    _, policy, _ = value_iteration(model, cfg, fixed_actions=fixed)
    return policy


class SingleUeEnv:
    """Sampled-kernel environment for agents that must not see p or q.

    Exposes reset/step only; rewards and transitions are drawn from the same
    kernel the simulator uses.
    """

    def __init__(
        self,
        model: MdpModel,
        rng_seed: int = 0,
        initial_tokens: Optional[int] = None,
        initial_type: Optional[int] = None,
    ):
        self._model = model
        self._rng = random.Random(rng_seed)
        self._cum = _cumulative(model)
        self._k0 = initial_tokens if initial_tokens is not None else model.token_cap // 2
        self._s0 = initial_type
        self._state: Optional[State] = None

    @property
    def n_types(self) -> int:
        return self._model.n_types

    @property
    def token_cap(self) -> int:
        return self._model.token_cap

    @property
    def discount(self) -> float:
        """The device's own time preference; not an environment secret."""
        return self._model.discount

    def reset(self) -> State:
        s0 = self._s0
        if s0 is None:
            s0 = min(bisect_right(self._cum, self._rng.random()), self._model.n_types)
        self._state = State(s0, self._k0)
        return self._state

    def step(self, action: int) -> Tuple[State, float, int]:
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        m = self._model
        s, k = self._state.type_index, self._state.tokens
        reward, event = 0.0, EVENT_NONE
        if s != IDLE:
            if action == D2D and k > 0:
                if self._rng.random() < m.env.q_accept:
                    reward = m.traffic.benefit_of(s)
                    k -= 1
                    event = EVENT_REQUEST_ACCEPTED
                else:
                    event = EVENT_REQUEST_REJECTED
        elif action == ACCEPT:
            if self._rng.random() < m.env.p_recv:
                reward = -m.cost
                event = EVENT_REQUEST_RECEIVED
                if k < m.token_cap:
                    k += 1
        next_type = min(bisect_right(self._cum, self._rng.random()), m.n_types)
        self._state = State(next_type, k)
        return self._state, reward, event
