import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import FIXTURE_DATA, ROOT
from errors import ConnectivityError, DataError, SolverError
from instances import random_network, random_susceptible
from mobility import (FlowTable, build_infection_flow, build_travel_rates, calibrate_beta,
                      SCHEMAS, check_strong_connectivity, load_tables)
from model_core import EpidemicParams, base_matrix
from spectral import lambda_max

FIXTURE_PATHS = {kind: FIXTURE_DATA / f"{kind}.csv" for kind in ("flows", "population", "gdp", "cases")}


def write_tables(tmp_path, flows="origin,destination,trips\nA,A,10\nA,B,2\nB,B,5\nB,A,1\n",
                 population="node,population\nA,1000\nB,500\n", gdp="node,gdp\nA,20\nB,10\n",
                 cases="node,cum_cases,deaths,date\nA,7,0,2020-03-10\nB,0,0,2020-03-10\n"):
    paths = {}
    for kind, text in (("flows", flows), ("population", population), ("gdp", gdp), ("cases", cases)):
        path = tmp_path / f"{kind}.csv"
        path.write_text(text, encoding="utf-8")
        paths[kind] = path
    return paths


def brute_force_flow(tau, populations):
    n = populations.size
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for l in range(n):
                visitors = sum(populations[k] * tau[k, l] for k in range(n))
                if visitors > 0:
                    A[i, j] += tau[i, l] * tau[j, l] * populations[j] / visitors
    return A


def test_fixture_loads_fourteen_counties():
    flows, populations, costs, cases = load_tables(FIXTURE_PATHS)
    assert flows.n == 14
    assert flows.matrix().shape == (14, 14)
    assert np.all(flows.matrix().sum(axis=1) > 0)
    assert populations.size == 14
    assert costs.z_a.max() == 1.0
    assert cases.date == "2020-03-10"
    assert "Middlesex" in flows.nodes


def test_small_tables_load(tmp_path):
    flows, populations, costs, cases = load_tables(write_tables(tmp_path))
    assert flows.nodes == ("A", "B")
    assert_allclose(flows.matrix(), [[10, 2], [1, 5]])
    assert_allclose(populations, [1000, 500])
    assert_allclose(costs.z_a, [1.0, 0.5])
    assert_allclose(cases.cum_cases, [7, 0])


def test_duplicate_flow_pairs_are_summed(tmp_path):
    paths = write_tables(tmp_path, flows="origin,destination,trips\nA,A,10\nA,B,2\nA,B,3\nB,A,1\n")
    flows, *_ = load_tables(paths)
    assert flows.matrix()[0, 1] == 5


def test_unknown_flow_node_is_a_roster_mismatch(tmp_path):
    paths = write_tables(tmp_path, flows="origin,destination,trips\nA,A,10\nA,C,2\nB,A,1\n")
    with pytest.raises(DataError, match="roster mismatch"):
        load_tables(paths)


def test_missing_population_row_is_a_roster_mismatch(tmp_path):
    paths = write_tables(tmp_path, gdp="node,gdp\nA,20\nB,10\nC,5\n")
    with pytest.raises(DataError, match="roster mismatch"):
        load_tables(paths)


@pytest.mark.parametrize("flows", ["", "origin,destination,trips\n"])
def test_empty_flow_file(tmp_path, flows):
    with pytest.raises(DataError, match="every node needs outgoing flow"):
        load_tables(write_tables(tmp_path, flows=flows))


def test_malformed_row_cites_line(tmp_path):
    paths = write_tables(tmp_path, flows="origin,destination,trips\nA,A,10\nA,B,lots\nB,A,1\n")
    with pytest.raises(DataError, match=r"flows\.csv:3: malformed row"):
        load_tables(paths)


def test_negative_count_is_rejected(tmp_path):
    paths = write_tables(tmp_path, population="node,population\nA,1000\nB,-5\n")
    with pytest.raises(DataError, match="negative count"):
        load_tables(paths)


def test_deaths_above_cases_are_rejected(tmp_path):
    paths = write_tables(tmp_path, cases="node,cum_cases,deaths,date\nA,1,2,2020-03-10\nB,0,0,2020-03-10\n")
    with pytest.raises(DataError, match="deaths exceed"):
        load_tables(paths)


def test_cases_above_adjusted_population_are_rejected(tmp_path):
    paths = write_tables(tmp_path, cases="node,cum_cases,deaths,date\nA,8000,0,2020-03-10\nB,0,0,2020-03-10\n")
    with pytest.raises(DataError, match="reporting rate"):
        load_tables(paths)


def test_missing_table_file(tmp_path):
    paths = write_tables(tmp_path)
    paths["gdp"] = tmp_path / "absent.csv"
    with pytest.raises(DataError, match="not found"):
        load_tables(paths)


def test_readme_documents_loader_columns():
    readme = (ROOT / "README.md").read_text(encoding="utf-8")
    for kind, columns in SCHEMAS.items():
        assert f"| `{kind}.csv` | `{','.join(columns)}` |" in readme


def test_single_node_travel_rate():
    assert_allclose(build_travel_rates(np.array([[42.0]]), 1.0 / 3.0), [[1.0 / 3.0]])


def test_two_node_normalization():
    tau = build_travel_rates(np.array([[3.0, 1.0], [2.0, 2.0]]), 1.0 / 3.0)
    assert_allclose(tau[0], [0.25, 1.0 / 12.0])


def test_fixture_rows_sum_to_time_outside():
    flows, *_ = load_tables(FIXTURE_PATHS)
    tau = build_travel_rates(flows, 1.0 / 3.0)
    assert_allclose(tau.sum(axis=1), 1.0 / 3.0, atol=1e-12)
    assert np.all(tau >= 0)


def test_per_node_time_outside():
    tau = build_travel_rates(FlowTable.from_matrix(np.array([[1.0, 1.0], [0.0, 4.0]]), ["A", "B"]),
                             np.array([0.5, 0.25]))
    assert_allclose(tau, [[0.25, 0.25], [0.0, 0.25]])


def test_zero_outgoing_flow_is_rejected():
    with pytest.raises(DataError, match="zero outgoing flow"):
        build_travel_rates(np.array([[1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DataError):
        build_travel_rates(np.array([[1.0]]), t_out=0.0)


def test_single_node_flow_equals_travel_rate():
    assert_allclose(build_infection_flow(np.array([[0.3]]), np.array([77.0])), [[0.3]])


def test_symmetric_network_gives_symmetric_flow():
    tau = np.array([[0.3, 0.05], [0.05, 0.25]])
    A = build_infection_flow(tau, np.array([400.0, 400.0]))
    assert_allclose(A, A.T, rtol=1e-14)


def test_flow_is_invariant_to_population_scale(rng):
    net = random_network(rng, 5)
    assert_allclose(build_infection_flow(net.tau, 37.5 * net.populations), net.flow, rtol=1e-13)


def test_flow_matches_triple_loop(rng):
    for n in range(1, 7):
        net = random_network(rng, n)
        tau = net.tau.copy()
        if n > 2:
            tau[:, 0] = 0.0
        assert_allclose(build_infection_flow(tau, net.populations),
                        brute_force_flow(tau, net.populations), atol=1e-13)


def test_unvisited_location_contributes_nothing():
    tau = np.array([[0.3, 0.0], [0.1, 0.0]])
    A = build_infection_flow(tau, np.array([10.0, 10.0]))
    assert np.all(np.isfinite(A))
    assert_allclose(A, brute_force_flow(tau, np.array([10.0, 10.0])))


def test_connectivity_examples():
    assert check_strong_connectivity(np.ones((4, 4)))
    assert not check_strong_connectivity(np.triu(np.ones((4, 4)), k=1))
    assert check_strong_connectivity(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert not check_strong_connectivity(np.eye(3))
    assert check_strong_connectivity(np.array([[0.5]]))


def test_calibration_at_bracket_endpoint(single_node):
    net, params, s0 = single_node
    base = params.with_betas(0.0, 0.0)
    floor = max(-(base.epsilon + base.r_a), -base.r_s)
    assert calibrate_beta(net.flow, s0, base, floor) == (0.0, 0.0)


def test_single_node_calibration_recovers_rate(single_node):
    net, params, s0 = single_node
    beta_a, beta_s = calibrate_beta(net.flow, s0, params, -0.0231)
    assert beta_s == pytest.approx(0.6, abs=1e-3)
    assert beta_a == pytest.approx(0.6754 * beta_s)
    M = base_matrix(s0, net.flow, params.with_betas(beta_a, beta_s))
    assert abs(lambda_max(M) + 0.0231) <= 1e-8


def test_calibration_round_trip(rng):
    net = random_network(rng, 4)
    s0 = random_susceptible(rng, 4)
    p = EpidemicParams.from_beta_s(0.0)
    beta_a, beta_s = calibrate_beta(net.flow, s0, p, 0.15)
    assert abs(lambda_max(base_matrix(s0, net.flow, p.with_betas(beta_a, beta_s))) - 0.15) <= 1e-8


def test_calibration_is_monotone_in_target(rng):
    for _ in range(5):
        net = random_network(rng, 3)
        s0 = random_susceptible(rng, 3)
        p = EpidemicParams.from_beta_s(0.0)
        target = rng.uniform(0.02, 0.3)
        _, low = calibrate_beta(net.flow, s0, p, target)
        _, high = calibrate_beta(net.flow, s0, p, 2 * target)
        assert high >= low


def test_calibration_bracket_failure(single_node):
    net, params, s0 = single_node
    with pytest.raises(SolverError, match="bracket failure"):
        calibrate_beta(net.flow, s0, params, -0.5)


def test_calibration_needs_connected_flow():
    with pytest.raises(ConnectivityError):
        calibrate_beta(np.eye(2) * 0.3, np.ones(2), EpidemicParams.from_beta_s(0.0), 0.1)


def test_fixture_calibration(fixture_model):
    _, params, _, _ = fixture_model
    assert params.beta_s == pytest.approx(3.2095, rel=1e-4)
    assert params.beta_a == pytest.approx(0.6754 * params.beta_s)
