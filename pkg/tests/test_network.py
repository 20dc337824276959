import numpy as np
import pytest

from d2dtoken import (
    ACCEPT,
    D2D,
    IDLE,
    NetworkConfig,
    Policy,
    make_model,
    run_fixed_point,
    run_network,
)
from d2dtoken.sim import EVENT_REQUEST_ACCEPTED, EVENT_REQUEST_RECEIVED


@pytest.fixture(scope="module")
def net_model():
    return make_model(
        benefits=[1.0, 2.5],
        stationary=[0.4, 0.3, 0.3],
        cost=0.5,
        discount=0.9,
        token_cap=4,
        p_recv=0.6,
        q_accept=0.6,
    )


def spend_always_policy(model):
    acts = np.ones((model.n_types + 1, model.token_cap + 1), dtype=np.int8)
    acts[:, 0] = 0
    acts[IDLE, :] = 1  # refuse at idle everywhere
    acts[IDLE, 0] = 0  # except broke, to keep some tokens flowing
    return Policy(acts)


def accept_even_at_cap_policy(model):
    acts = np.zeros((model.n_types + 1, model.token_cap + 1), dtype=np.int8)
    return Policy(acts)  # idle row accepts everywhere, including the cap


class TestConservation:
    def test_exact_with_protocol_respecting_policies(self, net_model):
        cfg = NetworkConfig(num_ues=8, slots=5000, policies="optimal", rng_seed=5)
        result = run_network(net_model, cfg)
        assert result.clipped_transfers == 0
        assert result.final_total_tokens == result.initial_total_tokens
        assert result.tokens_conserved

    def test_clipping_accounted_for(self, net_model):
        # one hoarder accepting even at the cap, one device that always spends
        cfg = NetworkConfig(
            num_ues=2,
            slots=4000,
            policies=[accept_even_at_cap_policy(net_model), spend_always_policy(net_model)],
            rng_seed=1,
            initial_tokens=3,
        )
        result = run_network(net_model, cfg)
        assert result.clipped_transfers > 0
        assert (
            result.final_total_tokens
            == result.initial_total_tokens - result.clipped_transfers
        )

    def test_wallets_stay_in_range(self, net_model):
        cfg = NetworkConfig(num_ues=5, slots=3000, policies="greedy", rng_seed=8)
        result = run_network(net_model, cfg)
        for trace in result.traces:
            assert trace.tokens.min() >= 0
            assert trace.tokens.max() <= net_model.token_cap


class TestEmergentRates:
    def test_all_refusing_population_serves_nobody(self, net_model):
        refuser = spend_always_policy(net_model)
        acts = np.array(refuser.actions)
        acts[IDLE, :] = 1  # refuse even when broke
        cfg = NetworkConfig(num_ues=4, slots=2000, policies=Policy(acts), rng_seed=2, initial_tokens=2)
        result = run_network(net_model, cfg)
        for rates in result.rates:
            assert rates.requests_issued > 0
            assert rates.q_hat == 0.0
            assert rates.accepting_slots == 0
            assert np.isnan(rates.p_hat)

    def test_symmetric_population_agrees(self, net_model):
        cfg = NetworkConfig(num_ues=12, slots=20_000, policies="optimal", rng_seed=3)
        result = run_network(net_model, cfg)
        for attr in ("p_hat", "q_hat"):
            vals = np.array([getattr(r, attr) for r in result.rates])
            assert not np.isnan(vals).any()
            pooled = vals.mean()
            for r in result.rates:
                n = r.accepting_slots if attr == "p_hat" else r.requests_issued
                se = np.sqrt(pooled * (1 - pooled) / n)
                assert abs(getattr(r, attr) - pooled) <= 3 * se + 1e-12

    def test_event_accounting(self, net_model):
        cfg = NetworkConfig(num_ues=6, slots=4000, policies="greedy", rng_seed=4)
        result = run_network(net_model, cfg)
        served_total = sum(r.requests_served for r in result.rates)
        earned_total = sum(
            int(np.sum(t.events == EVENT_REQUEST_RECEIVED)) for t in result.traces
        )
        spent_total = sum(
            int(np.sum(t.events == EVENT_REQUEST_ACCEPTED)) for t in result.traces
        )
        assert served_total == earned_total == spent_total


class TestPlumbing:
    def test_deterministic(self, net_model):
        cfg = NetworkConfig(num_ues=5, slots=2000, policies="optimal", rng_seed=17)
        a = run_network(net_model, cfg)
        b = run_network(net_model, cfg)
        for ta, tb in zip(a.traces, b.traces):
            assert np.array_equal(ta.rewards, tb.rewards)
            assert np.array_equal(ta.events, tb.events)
        assert a.rates == b.rates

    def test_config_validation(self, net_model):
        with pytest.raises(ValueError):
            NetworkConfig(num_ues=1, slots=10)
        with pytest.raises(ValueError):
            NetworkConfig(num_ues=2, slots=0)
        cfg = NetworkConfig(num_ues=3, slots=10, policies=["optimal", "greedy"])
        with pytest.raises(ValueError, match="one policy per UE"):
            run_network(net_model, cfg)

    def test_mismatched_caps_rejected(self, net_model):
        other = make_model([1.0], [0.5, 0.5], 0.5, 0.9, 9, 0.5, 0.5)
        cfg = NetworkConfig(num_ues=2, slots=10)
        with pytest.raises(ValueError, match="token cap"):
            run_network([net_model, other], cfg)

    def test_custom_pairing_rule(self, net_model):
        def no_pairs(requesters, acceptors, rng):
            return [], {}

        cfg = NetworkConfig(num_ues=4, slots=1000, policies="greedy", rng_seed=6)
        result = run_network(net_model, cfg, pairing=no_pairs)
        assert all(r.requests_served == 0 for r in result.rates)
        assert result.tokens_conserved

    def test_mixed_policy_population(self, net_model):
        cfg = NetworkConfig(
            num_ues=4,
            slots=1500,
            policies=["optimal", "greedy", "optimal", spend_always_policy(net_model)],
            rng_seed=9,
        )
        result = run_network(net_model, cfg)
        assert len(result.traces) == 4


class TestFixedPoint:
    def test_reports_rounds_and_direction(self, net_model):
        cfg = NetworkConfig(num_ues=10, slots=4000, policies="optimal", rng_seed=12)
        fp = run_fixed_point(net_model, cfg, max_rounds=3)
        assert 1 <= len(fp.rounds) <= 3
        first = fp.rounds[0]
        assert first.p_model == net_model.env.p_recv
        assert 0.0 <= first.p_hat <= 1.0
        assert 0.0 <= first.q_hat <= 1.0
        assert isinstance(fp.converged, bool)
        assert 0.01 <= fp.final_model.env.p_recv <= 0.99
