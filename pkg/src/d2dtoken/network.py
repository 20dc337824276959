"""Multi-device token economy: requests, matching, and emergent rates.

Here nothing is parametric: who receives requests and whose requests get
served emerge from the population's policies and the pairing rule.  Each
requester targets one accepting idle device uniformly at random; a device
receiving several requests serves exactly one, chosen uniformly.  Unmatched
requesters fall back to the cellular link in the same slot (no retry round).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .model import ACCEPT, D2D, IDLE, MdpModel
from .sim import (
    EVENT_NONE,
    EVENT_REQUEST_ACCEPTED,
    EVENT_REQUEST_REJECTED,
    EVENT_REQUEST_RECEIVED,
    SimTrace,
    _draw_types,
    build_greedy_policy,
)
from .solver import Policy, SolverConfig, value_iteration

# pairing rule: (requesters, acceptors, rng) -> (served pairs, requests routed per acceptor)
PairingRule = Callable[
    [List[int], List[int], random.Random],
    Tuple[List[Tuple[int, int]], Dict[int, List[int]]],
]


def uniform_pairing(
    requesters: List[int],
    acceptors: List[int],
    rng: random.Random,
) -> Tuple[List[Tuple[int, int]], Dict[int, List[int]]]:
    """Uniform-random targeting with uniform conflict resolution by the receiver."""
    routed: Dict[int, List[int]] = {}
    if acceptors:
        for u in requesters:
            target = acceptors[rng.randrange(len(acceptors))]
            routed.setdefault(target, []).append(u)
    pairs = []
    for target, candidates in routed.items():
        chosen = candidates[rng.randrange(len(candidates))]
        pairs.append((chosen, target))
    return pairs, routed


PolicySpec = Union[str, Policy]  # "optimal" | "greedy" | explicit table


@dataclass(frozen=True)
class NetworkConfig:
    """Population size, per-UE policies, horizon, and seed."""

    num_ues: int
    slots: int
    policies: Union[PolicySpec, Sequence[PolicySpec]] = "optimal"
    rng_seed: int = 0
    initial_tokens: Optional[int] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.num_ues < 2:
            raise ValueError("a network needs at least 2 UEs")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")


@dataclass(frozen=True)
class EmpiricalRates:
    """Measured per-UE counterparts of the environment rates.

    ``p_hat``: share of accepting idle slots that drew at least one request.
    ``q_hat``: share of issued requests that got served.  Either is ``nan``
    when its denominator is zero.
    """

    accepting_slots: int
    request_received_slots: int
    requests_issued: int
    requests_served: int

    @property
    def p_hat(self) -> float:
        if self.accepting_slots == 0:
            return float("nan")
        return self.request_received_slots / self.accepting_slots

    @property
    def q_hat(self) -> float:
        if self.requests_issued == 0:
            return float("nan")
        return self.requests_served / self.requests_issued


@dataclass(frozen=True, eq=False)
class NetworkResult:
    traces: Tuple[SimTrace, ...]
    rates: Tuple[EmpiricalRates, ...]
    initial_total_tokens: int
    final_total_tokens: int
    clipped_transfers: int

    @property
    def tokens_conserved(self) -> bool:
        """True when no transfer was lost to a full wallet."""
        return self.clipped_transfers == 0 and (
            self.final_total_tokens == self.initial_total_tokens
        )


def _resolve_policies(models: Sequence[MdpModel], cfg: NetworkConfig) -> List[Policy]:
    specs = cfg.policies
    if isinstance(specs, (str, Policy)):
        specs = [specs] * cfg.num_ues
    if len(specs) != cfg.num_ues:
        raise ValueError(f"need one policy per UE ({cfg.num_ues}), got {len(specs)}")
    cache: Dict[Tuple[int, str], Policy] = {}
    out: List[Policy] = []
    for u, spec in enumerate(specs):
        if isinstance(spec, Policy):
            out.append(spec)
            continue
        key = (id(models[u]), spec)
        if key not in cache:
            if spec == "optimal":
                _, pol, _ = value_iteration(models[u], cfg.solver)
            elif spec == "greedy":
                pol = build_greedy_policy(models[u], cfg.solver)
            else:
                raise ValueError(f"unknown policy spec {spec!r}")
            cache[key] = pol
        out.append(cache[key])
    return out


def run_network(
    models: Union[MdpModel, Sequence[MdpModel]],
    cfg: NetworkConfig,
    pairing: PairingRule = uniform_pairing,
) -> NetworkResult:
    """Simulate the population slot by slot and measure the emergent rates.

    Each slot draws every UE's traffic type independently, routes the D2D
    requests of token-holding UEs to accepting idle UEs under the pairing
    rule, and transfers one token per served pair (a transfer into a full
    wallet is clipped and counted).
    """
    if isinstance(models, MdpModel):
        models = [models] * cfg.num_ues
    if len(models) != cfg.num_ues:
        raise ValueError(f"need one model per UE ({cfg.num_ues}), got {len(models)}")
    caps = {m.token_cap for m in models}
    if len(caps) > 1:
        raise ValueError("all UEs must share the token cap")
    K = caps.pop()
    policies = _resolve_policies(models, cfg)

    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    type_rng = np.random.default_rng(seeds[0])
    match_rng = random.Random(int(seeds[1].generate_state(1)[0]))

    U, T = cfg.num_ues, cfg.slots
    types = np.empty((T, U), dtype=np.int16)
    for u in range(U):
        types[:, u] = _draw_types(models[u], type_rng.random(T))

    pol_l = [p.actions.tolist() for p in policies]
    bens = [[0.0] + list(m.traffic.benefits) for m in models]
    costs = [m.cost for m in models]
    k0 = cfg.initial_tokens if cfg.initial_tokens is not None else K // 2
    if not 0 <= k0 <= K:
        raise ValueError(f"initial_tokens {k0} outside [0, {K}]")
    wallets = [k0] * U
    initial_total = sum(wallets)

    tokens = np.empty((T, U), dtype=np.int16)
    actions = np.empty((T, U), dtype=np.int8)
    events = np.zeros((T, U), dtype=np.int8)
    rewards = np.zeros((T, U))
    deltas = np.zeros((T, U), dtype=np.int8)

    accepting = [0] * U
    received = [0] * U
    issued = [0] * U
    served = [0] * U
    clipped = 0

    types_l = types.tolist()
    for t in range(T):
        row = types_l[t]
        requesters: List[int] = []
        acceptors: List[int] = []
        for u in range(U):
            s = row[u]
            k = wallets[u]
            a = pol_l[u][s][k]
            tokens[t, u] = k
            actions[t, u] = a
            if s != IDLE:
                if a == D2D and k > 0:
                    requesters.append(u)
                    issued[u] += 1
            elif a == ACCEPT:
                acceptors.append(u)
                accepting[u] += 1

        if requesters:
            pairs, routed = pairing(requesters, acceptors, match_rng)
            for target in routed:
                received[target] += 1
            matched = set()
            for u, target in pairs:
                matched.add(u)
                served[u] += 1
                s = row[u]
                rewards[t, u] = bens[u][s]
                events[t, u] = EVENT_REQUEST_ACCEPTED
                deltas[t, u] = -1
                wallets[u] -= 1
                rewards[t, target] = -costs[target]
                events[t, target] = EVENT_REQUEST_RECEIVED
                if wallets[target] < K:
                    deltas[t, target] = 1
                    wallets[target] += 1
                else:
                    clipped += 1
            for u in requesters:
                if u not in matched:
                    events[t, u] = EVENT_REQUEST_REJECTED

    traces = tuple(
        SimTrace(
            types=types[:, u].copy(),
            tokens=tokens[:, u].copy(),
            actions=actions[:, u].copy(),
            events=events[:, u].copy(),
            rewards=rewards[:, u].copy(),
            token_delta=deltas[:, u].copy(),
            discount=models[u].discount,
            rng_seed=cfg.rng_seed,
        )
        for u in range(U)
    )
    rates = tuple(
        EmpiricalRates(accepting[u], received[u], issued[u], served[u]) for u in range(U)
    )
    return NetworkResult(
        traces=traces,
        rates=rates,
        initial_total_tokens=initial_total,
        final_total_tokens=sum(wallets),
        clipped_transfers=clipped,
    )


@dataclass(frozen=True)
class FixedPointRound:
    p_model: float
    q_model: float
    p_hat: float
    q_hat: float


@dataclass(frozen=True)
class FixedPointResult:
    rounds: Tuple[FixedPointRound, ...]
    converged: bool
    final_model: MdpModel


def run_fixed_point(
    model: MdpModel,
    cfg: NetworkConfig,
    max_rounds: int = 5,
    tol: float = 0.02,
    rate_clip: Tuple[float, float] = (0.01, 0.99),
) -> FixedPointResult:
    """Alternate solving against assumed rates and measuring emergent ones.

    Reports whether the assumed (p, q) stopped moving by more than ``tol``;
    convergence is observed, never asserted.  Measured rates are clipped into
    ``rate_clip`` so the re-solved instance stays valid.
    """
    m = model
    rounds: List[FixedPointRound] = []
    converged = False
    for r in range(max_rounds):
        result = run_network(m, replace(cfg, rng_seed=cfg.rng_seed + r))
        pooled_recv = sum(x.request_received_slots for x in result.rates)
        pooled_acc = sum(x.accepting_slots for x in result.rates)
        pooled_served = sum(x.requests_served for x in result.rates)
        pooled_issued = sum(x.requests_issued for x in result.rates)
        p_hat = pooled_recv / pooled_acc if pooled_acc else float("nan")
        q_hat = pooled_served / pooled_issued if pooled_issued else float("nan")
        rounds.append(FixedPointRound(m.env.p_recv, m.env.q_accept, p_hat, q_hat))
        lo, hi = rate_clip
        p_next = min(max(p_hat if p_hat == p_hat else m.env.p_recv, lo), hi)
        q_next = min(max(q_hat if q_hat == q_hat else m.env.q_accept, lo), hi)
        if abs(p_next - m.env.p_recv) <= tol and abs(q_next - m.env.q_accept) <= tol:
            converged = True
            break
        m = replace(m, env=replace(m.env, p_recv=p_next, q_accept=q_next))
    return FixedPointResult(tuple(rounds), converged, m)
