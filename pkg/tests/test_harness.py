import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavswarm.comms import ChannelConfig
from uavswarm.harness import (
    DDQLPolicy,
    LookaheadPolicy,
    MetricsReport,
    RandomPolicy,
    StayPolicy,
    compare,
    evaluate,
    export_tables,
    ingest_height_map,
    load_omega_grid,
    load_reports,
    parse_height_grid,
    parse_policy,
    read_cdf_table,
    run_episode,
    save_omega_grid,
    save_reports,
    timing_ratio,
    wilson_interval,
)
from uavswarm.neuralnet import Checkpoint, OptimizerState, QNetwork, save_checkpoint
from uavswarm.scenario import ConfigError, Scenario

SMALL = Scenario(M=10, F=10, U=2, K=2, steps=25)


def test_stay_policy_never_succeeds():
    rep = evaluate(StayPolicy(), SMALL, 30, seed=1)
    assert rep.success_probability == 0.0
    assert np.all(rep.occupied == 0)


def test_identical_policies_identical_metrics():
    reps = compare([LookaheadPolicy(1), LookaheadPolicy(1)], SMALL, 20, seed=2)
    assert list(reps) == ["la(1)", "la(1)#2"]
    a, b = reps.values()
    assert np.array_equal(a.completion, b.completion) and np.array_equal(a.occupied, b.occupied)


def test_worker_count_does_not_change_results():
    one = evaluate(LookaheadPolicy(1), SMALL, 12, seed=3, workers=1)
    two = evaluate(LookaheadPolicy(1), SMALL, 12, seed=3, workers=2)
    assert np.array_equal(one.completion, two.completion) and np.array_equal(one.occupied, two.occupied)


def test_common_worlds_across_policies():
    a = run_episode(StayPolicy(), SMALL, 5, 7)
    b = run_episode(RandomPolicy(), SMALL, 5, 7)
    assert np.array_equal(a.positions[0], b.positions[0])


def test_report_invariants():
    rep = evaluate(LookaheadPolicy(2), SMALL, 40, seed=4)
    cdf = rep.cdf()
    assert np.all(np.diff(cdf) >= 0) and 0 <= cdf.min() and cdf.max() <= 1
    assert rep.success_probability == cdf[SMALL.steps]
    assert all(rep.success_at(h) == cdf[h] for h in range(SMALL.steps + 1))
    assert rep.occupied.max() <= min(SMALL.U, SMALL.K)
    assert np.all((rep.completion <= SMALL.steps) | np.isinf(rep.completion))
    # a finished episode keeps its final count for the rest of the horizon
    done = np.isfinite(rep.completion)
    for n in np.flatnonzero(done):
        c = int(rep.completion[n])
        assert np.all(rep.occupied[n, c:] == SMALL.U)
    lo, hi = rep.confidence_interval()
    assert lo <= rep.success_probability <= hi
    assert rep.occupied_distribution(SMALL.steps).sum() == pytest.approx(1.0)


def test_wilson_known_values():
    lo, hi = wilson_interval(0.5, 100)
    assert (lo, hi) == pytest.approx((0.4038, 0.5962), abs=1e-4)
    assert wilson_interval(0.0, 10)[0] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2000), st.floats(0, 1))
def test_wilson_contains_estimate(n, p):
    k = round(p * n) / n
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k + 1e-12 and k - 1e-12 <= hi <= 1


def test_reports_and_tables_round_trip(tmp_path):
    reps = compare([LookaheadPolicy(1), RandomPolicy()], SMALL, 15, seed=5)
    save_reports(tmp_path / "r.json", reps, {"seed": 5})
    back, manifest = load_reports(tmp_path / "r.json")
    assert manifest == {"seed": 5}
    for k in reps:
        assert np.array_equal(back[k].completion, reps[k].completion)
        assert np.array_equal(back[k].occupied, reps[k].occupied)
    export_tables(back, tmp_path / "out")
    cdf = read_cdf_table(tmp_path / "out" / "cdf.tsv")
    for k in reps:
        assert np.allclose(cdf[k], reps[k].cdf(), atol=1e-6)
    summary = (tmp_path / "out" / "summary.tsv").read_text().splitlines()
    assert len(summary) == 3 and summary[0].startswith("policy\t")


def test_ddql_policy_and_timing_ratio(tmp_path):
    net = QNetwork(10, np.random.default_rng(0))
    save_checkpoint(tmp_path / "n.bin", Checkpoint(net, OptimizerState(), SMALL.rho))
    pol = parse_policy(f"ddql-soft:{tmp_path / 'n.bin'}:0.2", F=10, rho=SMALL.rho)
    assert isinstance(pol, DDQLPolicy) and pol.tau == 0.2
    assert parse_policy(f"ddql:{tmp_path / 'n.bin'}").tau is None
    reps = compare([LookaheadPolicy(3), pol], SMALL.replace(steps=5), 3, seed=0)
    assert timing_ratio(reps, "la(3)", pol.name) > 0


def test_parse_policy_errors():
    assert isinstance(parse_policy("la:3"), LookaheadPolicy) and parse_policy("la:3").horizon == 3
    assert isinstance(parse_policy("stay"), StayPolicy)
    with pytest.raises(ConfigError):
        parse_policy("oracle:1")


def test_lookahead_claims_over_lossy_channel():
    sc = SMALL.replace(U=3, channel=ChannelConfig(mode="lossy"))
    pol = LookaheadPolicy(2, claims_via_channel=True)
    rep = evaluate(pol, sc, 10, seed=6)
    assert 0 <= rep.success_probability <= 1


def test_no_channel_runs():
    rep = evaluate(LookaheadPolicy(1), SMALL.replace(channel=ChannelConfig(mode="none")), 10, seed=7)
    assert rep.episodes == 10


def test_success_is_cdf_at_horizon_for_report_from_dict():
    comp = np.array([3.0, math.inf, 10.0])
    rep = MetricsReport("x", 10, comp, np.zeros((3, 11), np.int64), np.zeros(3), 2)
    assert rep.success_probability == pytest.approx(2 / 3)
    assert rep.success_at(5) == pytest.approx(1 / 3)


# -- height maps -----------------------------------------------------------------


def test_low_heights_no_obstacles():
    omega, cov = ingest_height_map(np.full((50, 50), 12.0))
    assert cov == 0 and not omega.any()


def test_height_map_resolution():
    omega, _ = ingest_height_map(np.zeros((500, 500)), cell_side_m=10, input_resolution_m=1)
    assert omega.shape == (50, 50)
    omega, _ = ingest_height_map(np.zeros((50, 50)), cell_side_m=10)
    assert omega.shape == (50, 50)


def test_height_map_block_majority():
    h = np.zeros((4, 4))
    h[:2, :2] = [[50, 50], [0, 0]]  # half the block is tall
    h[2:, 2:] = [[50, 0], [0, 0]]  # a quarter
    omega, cov = ingest_height_map(h, cell_side_m=10, input_resolution_m=5)
    assert omega.tolist() == [[1, 0], [0, 0]] and cov == 0.25


def test_height_map_coverage_synthetic_city():
    # 275 of 2500 cells taller than 40 m -> 11% coverage
    rng = np.random.default_rng(8)
    h = rng.uniform(0, 39, (50, 50))
    tall = rng.choice(2500, 275, replace=False)
    h.reshape(-1)[tall] = rng.uniform(40, 200, 275)
    _, cov = ingest_height_map(h, threshold_m=40)
    assert cov == pytest.approx(0.11)


def test_height_map_bad_inputs(tmp_path):
    with pytest.raises(ConfigError):
        ingest_height_map(np.zeros((5, 5)), cell_side_m=10, input_resolution_m=3)
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n4,5\n")
    with pytest.raises(ConfigError):
        parse_height_grid(p)


def test_height_grid_files(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("# meters\n10,50\n45,0\n")
    omega, _ = ingest_height_map(parse_height_grid(p))
    assert omega.tolist() == [[0, 1], [1, 0]]
    save_omega_grid(tmp_path / "o.txt", omega)
    assert np.array_equal(load_omega_grid(tmp_path / "o.txt"), omega)


def test_scenario_with_ingested_grid(tmp_path):
    omega = np.zeros((12, 12), np.uint8)
    omega[3:6, 3:6] = 1
    save_omega_grid(tmp_path / "o.txt", omega)
    sc = Scenario(M=12, F=12, U=2, K=2, steps=5, omega_file=str(tmp_path / "o.txt"))
    res = run_episode(LookaheadPolicy(1), sc, 0, 0, sc.fixed_omega())
    assert all(omega[tuple(p)] == 0 for p in res.positions.reshape(-1, 2))
    with pytest.raises(ConfigError):
        Scenario(M=10, F=10, omega_file=str(tmp_path / "o.txt")).fixed_omega()
