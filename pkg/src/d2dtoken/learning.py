"""Tabular Q-learning for devices that do not know the environment rates.

The agent only ever sees states, sampled rewards, and next states drawn from
the sampled-kernel environment; the request and acceptance rates stay hidden.
Forced states (no tokens during traffic, full wallet while idle) carry a
single action, so the table never learns fictitious choices there.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ACCEPT, CELLULAR, D2D, IDLE, REFUSE, MdpModel, State
from .sim import SingleUeEnv
from .solver import Policy


@dataclass(frozen=True, eq=False)
class QTable:
    """Action-value estimates and visit counts over valid (state, action) pairs.

    Entries for the impossible action at a forced state are NaN and never
    written.
    """

    q: np.ndarray       # (n_types + 1, token_cap + 1, 2)
    visits: np.ndarray  # same shape, int64

    @classmethod
    def zeros(cls, n_types: int, token_cap: int) -> "QTable":
        q = np.zeros((n_types + 1, token_cap + 1, 2))
        q[1:, 0, D2D] = np.nan       # no token: direct mode is not a real choice
        q[IDLE, token_cap, ACCEPT] = np.nan  # full wallet: serving is never chosen
        visits = np.zeros(q.shape, dtype=np.int64)
        return cls(q=q, visits=visits)

    @property
    def n_types(self) -> int:
        return self.q.shape[0] - 1

    @property
    def token_cap(self) -> int:
        return self.q.shape[1] - 1

    def allowed_actions(self, state: State) -> Tuple[int, ...]:
        if not state.is_idle and state.tokens == 0:
            return (CELLULAR,)
        if state.is_idle and state.tokens == self.token_cap:
            return (REFUSE,)
        return (0, 1)

    def greedy_action(self, state: State) -> int:
        """Best learned action; exact ties go to action 0."""
        allowed = self.allowed_actions(state)
        if len(allowed) == 1:
            return allowed[0]
        q0, q1 = self.q[state.type_index, state.tokens]
        return 1 if q1 > q0 else 0

    def best_value(self, state: State) -> float:
        allowed = self.allowed_actions(state)
        return float(max(self.q[state.type_index, state.tokens, a] for a in allowed))

    def greedy_policy(self) -> Policy:
        acts = np.zeros((self.n_types + 1, self.token_cap + 1), dtype=np.int8)
        for s in range(self.n_types + 1):
            for k in range(self.token_cap + 1):
                acts[s, k] = self.greedy_action(State(s, k))
        acts[IDLE, self.token_cap] = REFUSE
        return Policy(acts)


Transition = Tuple[State, int, float, State]


def q_update(qtable: QTable, transition: Transition, rate: float, discount: float) -> QTable:
    """One temporal-difference step toward ``reward + discount * best_next``.

    Updates the visited entry in place and returns the table; visit counts
    are the caller's business (they usually drive the rate schedule).
    """
    state, action, reward, next_state = transition
    if action not in qtable.allowed_actions(state):
        raise ValueError(f"action {action} not available in state {state}")
    target = reward + discount * qtable.best_value(next_state)
    s, k = state.type_index, state.tokens
    qtable.q[s, k, action] += rate * (target - qtable.q[s, k, action])
    return qtable


@dataclass(frozen=True)
class LearningConfig:
    """Interaction budget, schedules, and seed for one training run.

    The learning rate for a pair visited ``n`` times is
    ``lr_initial / (1 + lr_decay * n)``; exploration decays linearly from
    ``eps_start`` to ``eps_end`` over the first ``eps_fraction`` of the budget.
    """

    slots: int = 200_000
    rng_seed: int = 0
    lr_initial: float = 1.0
    lr_decay: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    initial_tokens: Optional[int] = None

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if not 0.0 < self.lr_initial <= 1.0:
            raise ValueError("lr_initial must be in (0, 1]")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be >= 0")
        for name in ("eps_start", "eps_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 < self.eps_fraction <= 1.0:
            raise ValueError("eps_fraction must be in (0, 1]")

    def epsilon_at(self, slot: int) -> float:
        ramp = max(1, int(self.slots * self.eps_fraction))
        if slot >= ramp:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * slot / ramp


ProgressHook = Callable[[int, float], None]  # (slot, cumulative discounted reward)


def train(
    env_or_model: Union[SingleUeEnv, MdpModel],
    cfg: LearningConfig = LearningConfig(),
    on_log: Optional[ProgressHook] = None,
    log_every: int = 0,
) -> Tuple[QTable, Policy]:
    """Epsilon-greedy interaction against the sampled environment.

    Accepts either a ready environment or a model to wrap (the wrapper keeps
    the rates hidden from the update rule either way).  Fully reproducible
    from the seed.
    """
    if isinstance(env_or_model, MdpModel):
        env = SingleUeEnv(
            env_or_model, rng_seed=cfg.rng_seed, initial_tokens=cfg.initial_tokens
        )
    else:
        env = env_or_model
    discount = env.discount
    qtable = QTable.zeros(env.n_types, env.token_cap)
    rng = random.Random(cfg.rng_seed + 0x9E3779B9)  # decorrelate from env stream

    state = env.reset()
    disc_weight = 1.0
    cum_disc = 0.0
    for t in range(cfg.slots):
        allowed = qtable.allowed_actions(state)
        if len(allowed) > 1 and rng.random() < cfg.epsilon_at(t):
            action = allowed[rng.randrange(len(allowed))]
        else:
            action = qtable.greedy_action(state)
        next_state, reward, _ = env.step(action)
        n_visits = qtable.visits[state.type_index, state.tokens, action]
        rate = cfg.lr_initial / (1.0 + cfg.lr_decay * n_visits)
        q_update(qtable, (state, action, reward, next_state), rate, discount)
        qtable.visits[state.type_index, state.tokens, action] += 1

        cum_disc += disc_weight * reward
        disc_weight *= discount
        if on_log is not None and log_every and (t + 1) % log_every == 0:
            on_log(t + 1, cum_disc)
        state = next_state

    return qtable, qtable.greedy_policy()


def policy_agreement(learned: Policy, reference: Policy) -> float:
    """Fraction of states on which two policies pick the same action."""
    same = learned.actions == reference.actions
    return float(np.mean(same))


class QLearningAgent(BaseEstimator):
    """Estimator-style front end to tabular Q-learning.

    Parameters mirror LearningConfig.  After ``fit(model_or_env)`` the agent
    carries ``q_`` (QTable), ``policy_`` (greedy Policy), and
    ``training_curve_`` as (slot, cumulative discounted reward) pairs.
    """

    def __init__(
        self,
        slots: int = 200_000,
        rng_seed: int = 0,
        lr_initial: float = 1.0,
        lr_decay: float = 0.01,
        eps_start: float = 1.0,
        eps_end: float = 0.05,
        eps_fraction: float = 0.5,
    ):
        self.slots = slots
        self.rng_seed = rng_seed
        self.lr_initial = lr_initial
        self.lr_decay = lr_decay
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_fraction = eps_fraction

    def _config(self) -> LearningConfig:
        return LearningConfig(
            slots=self.slots,
            rng_seed=self.rng_seed,
            lr_initial=self.lr_initial,
            lr_decay=self.lr_decay,
            eps_start=self.eps_start,
            eps_end=self.eps_end,
            eps_fraction=self.eps_fraction,
        )

    def fit(self, env_or_model: Union[SingleUeEnv, MdpModel]):
        curve: List[Tuple[int, float]] = []
        log_every = max(1, self.slots // 200)
        qtable, policy = train(
            env_or_model,
            self._config(),
            on_log=lambda slot, cum: curve.append((slot, cum)),
            log_every=log_every,
        )
        self.q_ = qtable
        self.policy_ = policy
        self.training_curve_ = curve
        return self

    def predict(self, states: Iterable[State]) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return np.asarray([self.policy_.action(s) for s in states], dtype=np.int8)
