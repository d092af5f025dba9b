"""Shared fixtures: the standard grid worlds, their regions, and tiny oracles."""

from __future__ import annotations

import pytest
from hypothesis import settings

from safepomcp import (
    GridSpec,
    Pomdp,
    compute_winning_region,
    decompose,
    factored_gap_world,
    gen_obstacle,
    make_pomdp,
    powerset_supports,
    propagate_factored_regions,
)

settings.register_profile("pkg", deadline=None, max_examples=100)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def obstacle6() -> Pomdp:
    """The default 6x6 obstacle world (four rooms, four obstacles)."""
    return gen_obstacle(GridSpec())


@pytest.fixture(scope="session")
def obstacle6_region(obstacle6):
    return compute_winning_region(obstacle6)


@pytest.fixture(scope="session")
def obstacle6_factored(obstacle6):
    return propagate_factored_regions(obstacle6, decompose(obstacle6))


@pytest.fixture(scope="session")
def gap6() -> Pomdp:
    """The 6x6 door-gap world whose union misses a centrally-winning support."""
    return factored_gap_world()


@pytest.fixture(scope="session")
def gap6_region(gap6):
    return compute_winning_region(gap6)


@pytest.fixture(scope="session")
def gap6_factored(gap6):
    return propagate_factored_regions(gap6, decompose(gap6))


@pytest.fixture(scope="session")
def tiny3() -> Pomdp:
    """3x3 obstacle world, 10 states, two rooms split after column 2."""
    return gen_obstacle(GridSpec(n=3, row_bounds=(), col_bounds=(2,)))


@pytest.fixture(scope="session")
def tiny3_oracle(tiny3):
    from oracles import brute_force_winning

    return brute_force_winning(tiny3)


@pytest.fixture(scope="session")
def tiny3_region(tiny3):
    return compute_winning_region(
        tiny3, seeds=powerset_supports(range(tiny3.n_states))
    )


@pytest.fixture(scope="session")
def bandit() -> Pomdp:
    """Two-armed bandit: arm a reaches the paying state with 0.8 vs 0.4."""
    return make_pomdp(
        states=["start", "good", "bad"],
        actions=["a", "b"],
        observations=["o"],
        transitions={
            (0, 0): {1: 0.8, 2: 0.2},
            (0, 1): {1: 0.4, 2: 0.6},
            (1, 0): {1: 1.0},
            (1, 1): {1: 1.0},
            (2, 0): {2: 1.0},
            (2, 1): {2: 1.0},
        },
        obs_fn={(s, a): {0: 1.0} for s in range(3) for a in range(2)},
        rewards={
            (0, 0): 0.0, (0, 1): 0.0,
            (1, 0): 1.0, (1, 1): 1.0,
            (2, 0): 0.0, (2, 1): 0.0,
        },
        init={0: 1.0},
        reach=[1],
        avoid=[],
        on_nonabsorbing_reach="error",
    )
