import pytest

from disth2.bench import (
    example_one,
    gen_oscillator,
    passive_pair,
    random_cycle_params,
    triangle_params,
)
from disth2.netmodel import NetworkModel, SubsystemRealization, Topology
from disth2.synthesis import synthesize_decentralized, synthesize_distributed

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def triangle():
    return gen_oscillator(triangle_params())


@pytest.fixture(scope="session")
def ex1():
    return example_one()


@pytest.fixture(scope="session")
def pair():
    return passive_pair()


@pytest.fixture(scope="session")
def triangle_design(triangle):
    return synthesize_distributed(triangle, 1.0)


@pytest.fixture(scope="session")
def designs(triangle_design):
    """Every feasible synthesis instance of the test corpus."""
    cyc = gen_oscillator(random_cycle_params(5, 7))
    return {
        "triangle-distributed": triangle_design,
        "cycle5-distributed": synthesize_distributed(cyc, 10.0),
        "pair-decentralized": synthesize_decentralized(passive_pair(), 10.0),
    }


def random_network(rng, L=None, max_dim=2, edge_prob=0.6, io=True):
    """Random connected network with small random blocks.

    ``A_SS`` is kept small so that the interconnection is well-posed.
    """
    L = L or int(rng.integers(2, 5))
    widths = {(i, i + 1): int(rng.integers(1, max_dim + 1)) for i in range(L - 1)}
    for i in range(L):
        for j in range(i + 2, L):
            if rng.random() < edge_prob / 2:
                widths[(i, j)] = int(rng.integers(1, max_dim + 1))
    top = Topology(L, widths)
    nodes = []
    for i in range(L):
        n = sum(w for (a, b), w in widths.items() if i in (a, b))
        k, f, q = (int(rng.integers(1, max_dim + 1)) for _ in range(3))
        m, p = (int(rng.integers(1, max_dim + 1)) for _ in range(2)) if io else (0, 0)

        def r(a, b, s=0.3):
            return s * rng.standard_normal((a, b))

        nodes.append(SubsystemRealization.from_blocks(
            k, n, f, q, m, p,
            A_TT=r(k, k, 0.4), A_TS=r(k, n), A_ST=r(n, k), A_SS=r(n, n, 0.1),
            B_Td=r(k, f, 1.0), B_Sd=r(n, f), C_zT=r(q, k, 1.0), C_zS=r(q, n),
            D_zd=r(q, f), **({"B_Tu": r(k, m, 1.0), "C_yT": r(p, k, 1.0)} if io else {})))
    return NetworkModel(top, nodes)
