import csv
import io

import numpy as np
import pytest

from disth2.analysis import is_stable
from disth2.bench import (
    BENCH_FIELDS,
    OscillatorParams,
    bench_scaling,
    gen_oscillator,
    parse_disturbance,
    random_cycle_params,
    rows_to_csv,
    settling_horizon,
    simulate_closed_loop,
    triangle_params,
)
from disth2.netmodel import assemble_interconnected


def test_oscillator_node_matrices():
    model = gen_oscillator(triangle_params())
    T = 0.1
    nd = model.nodes[0]  # m=3, b=2, two unit springs
    assert np.allclose(nd.A_TT, [[1, T], [-2 * T / 3, 1 - 2 * T / 3]])
    assert np.allclose(nd.A_TS, [[0, 0], [T / 3, T / 3]])
    assert np.allclose(nd.B_Td, [[0], [T / 3]]) and np.allclose(nd.B_Tu, nd.B_Td)
    assert np.allclose(nd.C_yT, [[1, 0]])


def test_open_loop_oscillators_not_asymptotically_stable():
    # the common rigid-body mode sits on the unit circle
    for params in (triangle_params(), random_cycle_params(6, 2)):
        ok, r = is_stable(assemble_interconnected(gen_oscillator(params)))
        assert not ok and r == pytest.approx(1.0)


def test_random_cycles_are_seeded():
    a, b = random_cycle_params(7, 3), random_cycle_params(7, 3)
    assert a.m == b.m and a.k == b.k
    assert random_cycle_params(7, 4).m != a.m


def test_parameter_validation():
    with pytest.raises(ValueError):
        OscillatorParams([1.0], [1.0, 2.0], {})
    with pytest.raises(ValueError):
        OscillatorParams([1.0, -1.0], [1.0, 1.0], {(0, 1): 1.0})


@pytest.mark.parametrize("spec,std", [("zero", 0.0), ("white(1)", 1.0), ("white(0.25)", 0.5)])
def test_parse_disturbance(spec, std):
    assert parse_disturbance(spec) == pytest.approx(std)


@pytest.mark.parametrize("bad", ["pink(1)", "white(-1)", "white()"])
def test_parse_disturbance_rejects(bad):
    with pytest.raises(ValueError):
        parse_disturbance(bad)


def test_settling_horizon_grows_near_unit_circle():
    assert settling_horizon(0.5) < settling_horizon(0.9) < settling_horizon(0.99)


def _check_node_equations(model, sim):
    # every step must satisfy the local plant equations; s_ij is the neighbour angle
    for i, nd in enumerate(model.nodes):
        xi = sim.node("x", i)
        s = np.column_stack([sim.node("x", j)[:-1, 0] for j, _, _ in model.layout(i)])
        pred = (xi[:-1] @ nd.A_TT.T + s @ nd.A_TS.T + sim.node("d", i) @ nd.B_Td.T
                + sim.node("u", i) @ nd.B_Tu.T)
        assert np.allclose(xi[1:], pred, atol=1e-10)
        assert np.allclose(sim.node("z", i), xi[:-1] @ nd.C_zT.T)


def test_simulation_respects_plant_equations(triangle, triangle_design):
    sim = simulate_closed_loop(triangle, triangle_design.controllers, horizon=300, seed=1)
    _check_node_equations(triangle, sim)


def test_zero_noise_converges(triangle, triangle_design):
    x0 = np.random.default_rng(4).standard_normal(6)
    sim = simulate_closed_loop(triangle, triangle_design.controllers, x0=x0,
                               disturbance="zero", horizon=2000, seed=4)
    norms = sim.state_norms()
    assert norms[0] > 0.1
    assert norms[-1] < 1e-8 * norms[0]
    assert np.all(sim.d == 0)


def test_simulation_is_reproducible(triangle, triangle_design):
    a = simulate_closed_loop(triangle, triangle_design.controllers, horizon=100, seed=9)
    b = simulate_closed_loop(triangle, triangle_design.controllers, horizon=100, seed=9)
    assert np.array_equal(a.z, b.z)
    text = a.to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0][0] == "k" and len(rows) == a.horizon + 1
    assert float(rows[5][1]) == a.x[4, 0]


def test_bench_rows_small():
    rows = bench_scaling([3, 4], modes=("distributed", "central"), time_budget=60)
    assert [(r.L, r.mode) for r in rows] == [(3, "distributed"), (3, "central"),
                                             (4, "distributed"), (4, "central")]
    for r in rows:
        assert r.status == "ok" and r.verified and r.achieved_gamma < 10
        assert r.wall_ms > 0
    text = rows_to_csv(rows)
    head = text.splitlines()[0].split(",")
    assert tuple(head[:len(BENCH_FIELDS)]) == BENCH_FIELDS
    assert rows[0].lmi_dims[0] == rows[2].lmi_dims[-1]


def test_bench_records_budget_overrun():
    # a budget too short for the central solve yields a row, not an exception
    rows = bench_scaling([12], modes=("central",), time_budget=0.01)
    assert rows[0].status in ("over-budget", "aborted")
    assert not rows[0].verified
