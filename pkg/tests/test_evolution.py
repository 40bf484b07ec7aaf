import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from driftlab import (
    ConfigError,
    Dataset,
    DegenerateSelectionError,
    EvolutionConfig,
    OutcomeSpace,
    Population,
    ProbVector,
    SelectionRule,
    SimulationError,
    UpdateRule,
    apply_selection,
    make_rng,
    memory_preset,
    mixture,
    neighborhood,
    resolve_probes,
    rl_preset,
    roll_memory,
    run,
    sample_dataset,
    sample_indices,
    step,
    two_tier_reference,
    update_agents,
)


def pv(*mass):
    return ProbVector(OutcomeSpace(len(mass)), list(mass))


# --- population / mixture ----------------------------------------------------


def test_mixture_frozen_value():
    pop = Population.equal_weights([pv(0.5, 0.5), pv(0.1, 0.9)])
    assert mixture(pop).mass.tolist() == [0.3, 0.7]


def test_population_weight_validation():
    agents = [pv(0.5, 0.5), pv(0.1, 0.9)]
    with pytest.raises(ConfigError):
        Population(tuple(agents), np.array([0.5, 0.6]))
    with pytest.raises(ConfigError):
        Population(tuple(agents), np.array([1.0, -0.0001]))
    with pytest.raises(ConfigError):
        Population(tuple(agents), np.array([1.0]))


def test_population_requires_shared_space():
    from driftlab import SpaceMismatchError

    with pytest.raises(SpaceMismatchError):
        Population.equal_weights([pv(0.5, 0.5), pv(0.2, 0.3, 0.5)])


def test_unequal_weights_respected():
    pop = Population(
        (pv(1.0, 0.0), pv(0.0, 1.0)), np.array([0.25, 0.75])
    )
    assert mixture(pop).mass.tolist() == [0.25, 0.75]


# --- selection ----------------------------------------------------------------


def test_identity_selection_is_noop():
    p = pv(0.3, 0.7)
    assert apply_selection(p, SelectionRule("identity")).mass.tolist() == [0.3, 0.7]


def test_indicator_selection_renormalizes():
    p = pv(0.2, 0.3, 0.5)
    out = apply_selection(p, SelectionRule("indicator", indices=(0, 2)))
    np.testing.assert_allclose(out.mass, [2.0 / 7.0, 0.0, 5.0 / 7.0], atol=1e-15)


def test_degenerate_selection_is_hard_error():
    p = pv(0.5, 0.5, 0.0)
    with pytest.raises(DegenerateSelectionError):
        apply_selection(p, SelectionRule("indicator", indices=(2,)))


def test_top_mass_selection_tie_break_low_index():
    p = pv(0.25, 0.25, 0.5)
    out = apply_selection(p, SelectionRule("top-mass", k=2))
    # 0.5 first, then the tie at 0.25 resolves to index 0
    np.testing.assert_allclose(out.mass, [1.0 / 3.0, 0.0, 2.0 / 3.0], atol=1e-15)
    with pytest.raises(ConfigError):
        apply_selection(p, SelectionRule("top-mass", k=4))


def test_reward_reweight_frozen_example():
    # acceptance a = exp(r - max r) = (0.5, 1.0) on pbar (0.4, 0.6)
    p = pv(0.4, 0.6)
    rule = SelectionRule("reward-reweight", reward=(math.log(0.5), 0.0), beta=1.0)
    out = apply_selection(p, rule)
    np.testing.assert_allclose(out.mass, [0.25, 0.75], atol=1e-15)


def test_selection_rule_validation():
    with pytest.raises(ConfigError):
        SelectionRule("nope")
    with pytest.raises(ConfigError):
        SelectionRule("indicator")
    with pytest.raises(ConfigError):
        SelectionRule("top-mass", k=0)
    with pytest.raises(ConfigError):
        SelectionRule("reward-reweight")


@given(
    mass=st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=12),
    beta=st.floats(0.0, 5.0),
)
@settings(max_examples=80, deadline=None)
def test_reward_reweight_preserves_support(mass, beta):
    total = sum(mass)
    p = pv(*[m / total for m in mass])
    reward = tuple(float(i) for i in range(len(mass)))
    out = apply_selection(p, SelectionRule("reward-reweight", reward=reward, beta=beta))
    assert np.all(out.mass > 0.0)
    assert out.mass.sum() == pytest.approx(1.0, abs=1e-9)
    if beta > 0.0:
        # tilting toward higher reward never lowers the top outcome's share
        assert out.mass[-1] >= p.mass[-1] - 1e-12


# --- sampling -------------------------------------------------------------------


def test_sampling_deterministic_per_seed():
    p = pv(0.2, 0.3, 0.5)
    a = sample_indices(p, 1000, make_rng(42))
    b = sample_indices(p, 1000, make_rng(42))
    c = sample_indices(p, 1000, make_rng(43))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampling_never_hits_zero_mass_tail():
    p = pv(0.7, 0.3, 0.0, 0.0)
    draws = sample_indices(p, 5000, make_rng(0))
    assert draws.max() <= 1


def test_sampling_goodness_of_fit():
    p = pv(0.2, 0.3, 0.5)
    draws = sample_indices(p, 100_000, make_rng(7))
    counts = np.bincount(draws, minlength=3)
    res = scipy.stats.chisquare(counts, f_exp=np.array([0.2, 0.3, 0.5]) * 100_000)
    assert res.pvalue > 0.001


def test_sample_dataset_validation():
    p = pv(0.5, 0.5)
    with pytest.raises(ConfigError):
        sample_dataset(p, 0, make_rng(0))
    data = sample_dataset(p, 10, make_rng(0), round_index=3)
    assert len(data) == 10
    assert data.round == 3
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2), dtype=np.int64), 1)


# --- update rules ----------------------------------------------------------------


def _data(*samples):
    return Dataset(np.array(samples, dtype=np.int64), 1)


def test_mle_update_frozen():
    pop = Population.equal_weights([pv(0.5, 0.5), pv(0.5, 0.5)])
    out = update_agents(pop, _data(0, 0, 0, 1), UpdateRule("mle"))
    for agent in out.agents:
        assert agent.mass.tolist() == [0.75, 0.25]
    # all agents coincide after a shared-data update
    assert np.array_equal(out.agents[0].mass, out.agents[1].mass)


def test_smoothed_mle_frozen():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    out = update_agents(pop, _data(0, 0, 0, 1), UpdateRule("smoothed-mle", lam=1.0))
    np.testing.assert_allclose(out.agents[0].mass, [4.0 / 6.0, 2.0 / 6.0], atol=1e-15)


def test_memory_buffer_frozen():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    rule = memory_preset(capacity=4, alpha_mem=0.5)
    out = update_agents(pop, _data(1, 1), rule, memory=(0, 0))
    # buffer (0,0,1,1) gives (0.5, 0.5); fresh data gives (0, 1); blend halves
    np.testing.assert_allclose(out.agents[0].mass, [0.25, 0.75], atol=1e-15)


def test_roll_memory_keeps_most_recent():
    assert roll_memory((1, 2, 3), np.array([4, 5]), 4) == (2, 3, 4, 5)
    assert roll_memory((), np.array([1]), 3) == (1,)


def test_reward_reweighted_update_fixed():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    rule = UpdateRule(
        "reward-reweighted-mle", beta=1.0, reward=(0.0, math.log(2.0)), reward_source="fixed"
    )
    out = update_agents(pop, _data(0, 1), rule)
    # counts (1,1) tilted by exp(r - max r) = (0.5, 1)
    np.testing.assert_allclose(out.agents[0].mass, [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)


def test_reward_reweighted_update_mixture_loglik():
    pop = Population.equal_weights([pv(0.8, 0.2)])
    out = update_agents(pop, _data(0, 1), rl_preset(beta=1.0))
    # tilt = pbar ** 1: counts (1,1) * (0.8, 0.2) -> (0.8, 0.2)
    np.testing.assert_allclose(out.agents[0].mass, [0.8, 0.2], atol=1e-15)


def test_reward_tilt_total_annihilation_is_error():
    pop = Population.equal_weights([pv(0.0, 1.0)])
    with pytest.raises(ValueError):
        # all sampled outcomes carry zero mixture mass, tilt kills everything
        update_agents(pop, _data(0, 0), rl_preset(beta=1.0))


def test_update_rejects_empty_or_alien_data():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    with pytest.raises(ValueError):
        update_agents(pop, Dataset(np.array([], dtype=np.int64), 1), UpdateRule("mle"))
    with pytest.raises(ValueError):
        update_agents(pop, _data(0, 5), UpdateRule("mle"))


@given(
    counts=st.lists(st.integers(0, 20), min_size=2, max_size=10).filter(
        lambda c: sum(c) > 0
    ),
    lam=st.floats(1e-3, 10.0),
)
@settings(max_examples=80, deadline=None)
def test_smoothed_mle_floor_property(counts, lam):
    k = len(counts)
    samples = [i for i, c in enumerate(counts) for _ in range(c)]
    pop = Population.equal_weights([pv(*([1.0 / k] * k))])
    out = update_agents(
        pop, Dataset(np.array(samples, dtype=np.int64), 1), UpdateRule("smoothed-mle", lam=lam)
    )
    n = len(samples)
    floor = lam / (n + lam * k)
    assert np.all(out.agents[0].mass >= floor - 1e-15)


def test_neighborhood_dilation():
    s = OutcomeSpace(10)
    assert neighborhood(s, [4], 0).tolist() == [4]
    assert neighborhood(s, [4], 2).tolist() == [2, 3, 4, 5, 6]
    assert neighborhood(s, [0, 9], 1).tolist() == [0, 1, 8, 9]


# --- step / run -------------------------------------------------------------------


def test_step_composition():
    pop = Population.equal_weights([pv(0.5, 0.5), pv(0.5, 0.5)])
    cfg = EvolutionConfig(sample_size=50, rounds=1, seed=5)
    res = step(pop, cfg, make_rng(5), round_index=2)
    assert res.dataset.round == 2
    assert len(res.dataset) == 50
    assert res.training_dist.mass.tolist() == [0.5, 0.5]
    counts = np.bincount(res.dataset.samples, minlength=2)
    np.testing.assert_allclose(res.population.agents[0].mass, counts / 50.0, atol=1e-15)


def test_per_agent_datasets_give_distinct_agents():
    pop = Population.equal_weights([pv(0.5, 0.5)] * 3)
    cfg = EvolutionConfig(sample_size=51, rounds=1, seed=5, per_agent_datasets=True)
    res = step(pop, cfg, make_rng(5))
    masses = [tuple(a.mass.tolist()) for a in res.population.agents]
    assert len(set(masses)) > 1
    assert len(res.dataset) == 153


def test_per_agent_datasets_rejects_memory_rule():
    with pytest.raises(ConfigError):
        EvolutionConfig(
            sample_size=10, rounds=1, update=memory_preset(capacity=10),
            per_agent_datasets=True,
        )


def test_run_record_structure():
    ref = two_tier_reference(20, safe_mass=0.9, safe_fraction=0.5)
    pop = Population.equal_weights([ref.pi_star] * 2)
    cfg = EvolutionConfig(sample_size=40, rounds=7, seed=1)
    probes = resolve_probes(("kl_safety", "safe_mass"), default_tau=0.01)
    traj = run(pop, cfg, probes, ref=ref, monitors={"tail": (8, 9)})
    assert traj.rounds == 7
    assert [r.round for r in traj.records] == list(range(8))
    assert traj.initial.values["kl_safety"] == 0.0
    assert traj.initial.monitor_absent["tail"] is None
    for rec in traj.records[1:]:
        assert isinstance(rec.monitor_absent["tail"], bool)
        assert set(rec.values) == {"kl_safety", "safe_mass"}
    assert traj.probe_names == ("kl_safety", "safe_mass")


def test_run_probes_require_reference():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    cfg = EvolutionConfig(sample_size=10, rounds=1)
    probes = resolve_probes(("kl_safety",), default_tau=0.01)
    with pytest.raises(ConfigError):
        run(pop, cfg, probes)


def test_run_rejects_empty_monitor():
    pop = Population.equal_weights([pv(0.5, 0.5)])
    cfg = EvolutionConfig(sample_size=10, rounds=1)
    with pytest.raises(ConfigError):
        run(pop, cfg, monitors={"empty": ()})


def test_run_is_deterministic_and_seed_sensitive():
    ref = two_tier_reference(50, safe_mass=0.9, safe_fraction=0.5)
    pop = Population.equal_weights([ref.pi_star] * 2)
    cfg = EvolutionConfig(sample_size=30, rounds=10, seed=11)
    a = run(pop, cfg, keep_states=True)
    b = run(pop, cfg, keep_states=True)
    for sa, sb in zip(a.states, b.states):
        for aa, ab in zip(sa.agents, sb.agents):
            assert np.array_equal(aa.mass, ab.mass)
    c = run(pop, EvolutionConfig(sample_size=30, rounds=10, seed=12), keep_states=True)
    assert any(
        not np.array_equal(xa.agents[0].mass, xc.agents[0].mass)
        for xa, xc in zip(a.states, c.states)
    )


def test_run_matches_manual_step_replay():
    """run() must consume randomness exactly like the documented step sequence."""
    ref = two_tier_reference(30, safe_mass=0.9, safe_fraction=0.5)
    pop0 = Population.equal_weights([ref.pi_star] * 3)
    cfg = EvolutionConfig(
        sample_size=25, rounds=8, seed=21, update=UpdateRule("smoothed-mle", lam=0.5)
    )
    traj = run(pop0, cfg, keep_states=True)
    rng = make_rng(cfg.seed)
    pop, memory = pop0, ()
    for r in range(1, cfg.rounds + 1):
        res = step(pop, cfg, rng, memory, r)
        pop, memory = res.population, res.memory
        for manual, recorded in zip(pop.agents, traj.states[r].agents):
            assert np.array_equal(manual.mass, recorded.mass)


def test_isolation_reference_cannot_touch_dynamics():
    """Bitwise-equal trajectories under different references, same seed."""
    ref_a = two_tier_reference(40, safe_mass=0.9, safe_fraction=0.5)
    ref_b = two_tier_reference(40, safe_mass=0.6, safe_fraction=0.25)
    pop = Population.equal_weights([pv(*([1.0 / 40] * 39 + [1.0 / 40]))] * 2)
    # same initial population measured against two different references
    cfg = EvolutionConfig(sample_size=35, rounds=12, seed=3)
    probes = resolve_probes(("kl_safety", "safe_mass"), default_tau=0.01)
    ta = run(pop, cfg, probes, ref=ref_a, keep_states=True)
    tb = run(pop, cfg, probes, ref=ref_b, keep_states=True)
    for sa, sb in zip(ta.states, tb.states):
        for aa, ab in zip(sa.agents, sb.agents):
            assert np.array_equal(aa.mass, ab.mass)
    # the measurements themselves do differ, proving the probes saw different refs
    assert ta.records[0].values["safe_mass"] != tb.records[0].values["safe_mass"]


def test_simulation_error_carries_round_index():
    # selection demands an outcome the population gives zero mass: the very
    # first snapshot is already impossible and must fail as a simulation
    # error with the round it died in, not as a bare selection error
    pop = Population.equal_weights([pv(1.0, 0.0)])
    cfg_bad = EvolutionConfig(
        sample_size=5,
        rounds=50,
        seed=0,
        selection=SelectionRule("indicator", indices=(1,)),
    )
    with pytest.raises(SimulationError) as err:
        run(pop, cfg_bad)
    assert err.value.round_index == 0
    assert isinstance(err.value.__cause__, DegenerateSelectionError)


def test_uniform_population_mixture_unchanged_by_update_shape():
    # agents coincide after update regardless of how distinct they start
    pop = Population.equal_weights([pv(0.9, 0.1), pv(0.1, 0.9)])
    cfg = EvolutionConfig(sample_size=100, rounds=1, seed=9)
    res = step(pop, cfg, make_rng(9))
    assert np.array_equal(res.population.agents[0].mass, res.population.agents[1].mass)
