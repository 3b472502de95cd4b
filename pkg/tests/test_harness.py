"""End-to-end trials, benchmark sweeps, result files and verification suites."""

import math
import time
from dataclasses import dataclass

import pytest
from pydantic import ValidationError

from convex_evasion.core.config import AlgorithmId, ClassifierFamily
from convex_evasion.core.errors import InvalidInputError
from convex_evasion.geometry.cost import BoundMode, CostBall, CostSpec
from convex_evasion.harness.experiments import (
    SUMMARY_FIELDS,
    TRIAL_FIELDS,
    BenchSweep,
    MacSource,
    reference_mac,
    run_bench,
    run_evade,
)
from convex_evasion.harness.reports import (
    output_dir_writable,
    read_rows,
    write_rows,
    write_trace,
)
from convex_evasion.harness.verify import SUITES, VerifyOptions, run_verify
from convex_evasion.oracles.classifiers import ConvexNegativeClassifier
from convex_evasion.search.positive import Termination

SMALL_SAMPLER = {
    "samples_per_phase": 10,
    "walk_steps": 10,
    "rounding_rounds": 1,
    "max_phases": 6,
}


def without_timing(outcome) -> dict[str, object]:
    return outcome.record.model_dump(exclude={"wall_ms"})


@pytest.mark.parametrize("algorithm", [AlgorithmId.CONVEX_SEARCH, AlgorithmId.KMLS])
def test_halfspace_trial_is_certified(config_factory, algorithm):
    """Stay within (1 + ε) of the analytic MAC inside the query ceiling."""
    outcome = run_evade(config_factory(algorithm=algorithm, seed=1))
    record = outcome.record
    assert record.termination is Termination.CONVERGED
    assert record.mac_source is MacSource.ANALYTIC
    assert 1.0 - 1e-9 <= record.ratio <= 1.1 + 1e-9
    assert record.bound_ok
    assert record.queries >= outcome.result.queries


def assert_seeded_halfspaces(config_factory, algorithm, dimension, epsilon, seeds):
    for seed in seeds:
        config = config_factory(
            algorithm=algorithm, dimension=dimension, epsilon=epsilon, seed=seed
        )
        record = run_evade(config).record
        assert record.termination is Termination.CONVERGED, seed
        assert record.ratio <= 1.0 + epsilon + 1e-9, seed
        assert record.bound_ok, seed


@pytest.mark.parametrize("epsilon", [0.1, 0.01])
@pytest.mark.parametrize("dimension", [2, 10])
@pytest.mark.parametrize("algorithm", [AlgorithmId.CONVEX_SEARCH, AlgorithmId.KMLS])
def test_a_few_seeded_halfspaces(config_factory, algorithm, dimension, epsilon):
    """Certify the first five seeded halfspaces inside the query ceiling."""
    assert_seeded_halfspaces(config_factory, algorithm, dimension, epsilon, range(5))


@pytest.mark.slow
@pytest.mark.parametrize("epsilon", [0.1, 0.01])
@pytest.mark.parametrize("dimension", [2, 10, 50])
@pytest.mark.parametrize("algorithm", [AlgorithmId.CONVEX_SEARCH, AlgorithmId.KMLS])
def test_fifty_seeded_halfspaces(config_factory, algorithm, dimension, epsilon):
    """Certify all fifty seeded halfspaces inside the query ceiling."""
    assert_seeded_halfspaces(config_factory, algorithm, dimension, epsilon, range(50))


def test_trials_are_deterministic(config_factory):
    """Produce identical rows, apart from timing, for the same seed."""
    first = run_evade(config_factory(seed=7, dimension=4))
    second = run_evade(config_factory(seed=7, dimension=4))
    assert without_timing(first) == without_timing(second)


def test_algorithms_share_the_instance(config_factory):
    """Build the classifier from the seed alone."""
    convex = run_evade(config_factory(seed=3, dimension=3))
    linear = run_evade(config_factory(seed=3, dimension=3, algorithm=AlgorithmId.LINEAR_SEARCH))
    assert convex.record.mac_reference == linear.record.mac_reference


def test_additive_trial_meets_eta(config_factory):
    """Stay within η of the MAC when starting from a zero lower bound."""
    record = run_evade(
        config_factory(mode=BoundMode.ADDITIVE, eta=0.05, epsilon=None, seed=2)
    ).record
    assert record.termination is Termination.CONVERGED
    assert record.final_cost - record.mac_reference <= 0.05 + 1e-9


def test_bootstrapped_trial_finds_its_own_negative(config_factory):
    """Spiral out to a negative point and still certify the result."""
    config = config_factory(
        classifier={"family": ClassifierFamily.COST_BALL, "threshold": 3.0},
        bootstrap_negative=True,
        dimension=3,
    )
    outcome = run_evade(config)
    assert outcome.record.termination is Termination.CONVERGED
    assert outcome.record.mac_reference == 3.0
    assert outcome.record.ratio <= 1.1 + 1e-9
    assert outcome.record.queries > outcome.result.queries


def test_free_coordinates_need_both_bounds(config_factory):
    """Refuse to bootstrap bounds when a coordinate costs nothing to change."""
    with pytest.raises(InvalidInputError):
        run_evade(config_factory(weights=[1.0, 0.0]))


def test_query_budget_ends_the_trial(config_factory):
    """Report budget exhaustion instead of raising."""
    record = run_evade(config_factory(budgets={"max_queries": 3})).record
    assert record.termination is Termination.BUDGET_EXHAUSTED
    assert record.queries <= 3


def test_transcript_is_returned_on_request(config_factory):
    """Keep one transcript entry per query when asked to."""
    outcome = run_evade(config_factory(record_transcript=True))
    assert len(outcome.transcript) == outcome.record.queries
    assert run_evade(config_factory()).transcript is None


def test_set_search_trial_on_a_box(config_factory):
    """Find a negative point no cheaper than the MAC of the box."""
    config = config_factory(
        algorithm=AlgorithmId.SET_SEARCH,
        classifier={"family": ClassifierFamily.HALFSPACE_BOX},
        epsilon=0.5,
        sampler=SMALL_SAMPLER,
    )
    record = run_evade(config).record
    assert record.mac_source is MacSource.ANALYTIC
    assert record.mac_reference == pytest.approx(2.0)
    assert record.ratio >= 1.0 - 1e-9
    assert record.bound_ok


@pytest.mark.slow
@pytest.mark.parametrize("exponent", [1.0, 2.0])
def test_set_search_on_boxes_with_default_constants(config_factory, exponent):
    """Converge on 18 of 20 seeds per dimension in under five minutes per exponent."""
    config = config_factory(
        algorithm=AlgorithmId.SET_SEARCH,
        classifier={"family": ClassifierFamily.HALFSPACE_BOX},
        exponent=exponent,
        epsilon=0.5,
    )
    sweep = BenchSweep(
        algorithms=[AlgorithmId.SET_SEARCH],
        dimensions=[2, 5],
        epsilons=[0.5],
        seeds=list(range(20)),
    )
    started = time.perf_counter()
    report = run_bench(config, sweep)
    assert time.perf_counter() - started < 300
    for dimension in (2, 5):
        records = [o.record for o in report.outcomes if o.record.dimension == dimension]
        assert len(records) == 20
        assert not [r for r in records if r.termination is Termination.BUDGET_EXHAUSTED]
        assert all(r.queries <= config.budgets.max_queries for r in records)
        certified = [
            r
            for r in records
            if r.termination is Termination.CONVERGED and r.final_cost <= 3.0 + 1e-9
        ]
        assert len(certified) >= 18, dimension
        assert all(r.ratio >= 1.0 - 1e-9 and r.bound_ok for r in certified), dimension


def test_l2_trial_is_certified_above_the_threshold(config_factory):
    """Certify an L2 search through the enclosed L1 ball at ε = 0.5."""
    config = config_factory(
        classifier={"family": ClassifierFamily.COST_BALL, "threshold": 1.5},
        exponent=2.0,
        epsilon=0.5,
    )
    record = run_evade(config).record
    assert record.mac_source is MacSource.ANALYTIC
    assert record.mac_reference == 1.5
    assert record.termination is Termination.CONVERGED
    assert record.ratio <= 1.5 + 1e-9


def test_brute_force_reference_without_a_closed_form():
    """Fall back to a grid search when no closed form applies."""
    centre = CostSpec.unweighted(2, target=[3.0, 0.0])
    body = ConvexNegativeClassifier(ball=CostBall(centre, 1.0))
    mac, source = reference_mac(body, CostSpec.unweighted(2), 4.0)
    assert source is MacSource.BRUTE_FORCE
    assert 2.0 <= mac <= 2.1


def test_no_reference_above_three_dimensions():
    """Report no MAC when the grid would be too large."""
    centre = CostSpec.unweighted(4, target=[3.0, 0.0, 0.0, 0.0])
    body = ConvexNegativeClassifier(ball=CostBall(centre, 1.0))
    mac, source = reference_mac(body, CostSpec.unweighted(4), 4.0)
    assert source is MacSource.NONE
    assert math.isnan(mac)


def test_bench_writes_trials_and_summary(config_factory):
    """Write one row per grid cell and one summary row per (algorithm, D, ε)."""
    config = config_factory(weights=[1.0, 2.0])
    sweep = BenchSweep(
        algorithms=[AlgorithmId.CONVEX_SEARCH, AlgorithmId.KMLS],
        dimensions=[2, 3],
        epsilons=[0.1],
        seeds=[0, 1],
    )
    report = run_bench(config, sweep)
    trials = read_rows(report.trials)
    assert list(trials[0]) == TRIAL_FIELDS
    assert len(trials) == 8
    assert {row["D"] for row in trials} == {"2", "3"}
    assert all(row["bound_ok"] == "true" for row in trials)
    summary = read_rows(report.summary)
    assert list(summary[0]) == SUMMARY_FIELDS
    assert len(summary) == 4
    assert all(row["converged"] == "2" for row in summary)


def test_bench_is_the_same_on_several_workers(config_factory):
    """Give each trial the same result whatever the worker count."""
    sweep = BenchSweep(
        algorithms=[AlgorithmId.CONVEX_SEARCH], dimensions=[2], epsilons=[0.2], seeds=[0, 1, 2]
    )
    serial = run_bench(config_factory(), sweep)
    pooled = run_bench(config_factory(workers=3), sweep)
    assert [without_timing(o) for o in serial.outcomes] == [
        without_timing(o) for o in pooled.outcomes
    ]


def test_bench_records_rejected_cells(config_factory):
    """Keep a row for a trial whose parameters are refused."""
    config = config_factory(weights=[1.0, 0.0])
    sweep = BenchSweep(
        algorithms=[AlgorithmId.CONVEX_SEARCH], dimensions=[2], epsilons=[0.1], seeds=[0]
    )
    (row,) = read_rows(run_bench(config, sweep).trials)
    assert row["termination"] == "rejected"
    assert row["final_cost"] == "nan"


def test_empty_sweeps_are_rejected():
    """Require at least one value on every axis."""
    with pytest.raises(ValidationError):
        BenchSweep(algorithms=[], dimensions=[2], epsilons=[0.1], seeds=[0])


def test_rows_use_round_tripping_cells(tmp_path):
    """Write booleans in lowercase and floats exactly."""
    path = write_rows(
        tmp_path / "nested" / "rows.csv",
        [{"ok": True, "value": 0.1, "name": "a"}],
        ["name", "value", "ok"],
    )
    assert read_rows(path) == [{"name": "a", "value": "0.1", "ok": "true"}]


@dataclass
class Step:
    cost: float
    point: list[float]


def test_traces_are_json_lines(tmp_path):
    """Write one sorted JSON object per record, infinities as text."""
    path = write_trace(tmp_path / "trace.jsonl", [Step(1.5, [0.0]), {"cost": math.inf}])
    assert path.read_text().splitlines() == [
        '{"cost": 1.5, "point": [0.0]}',
        '{"cost": "inf"}',
    ]


def test_output_dir_is_checked_for_writes(tmp_path):
    """Create a missing directory, and report a path blocked by a file."""
    assert output_dir_writable(tmp_path / "new" / "results")
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert not output_dir_writable(blocker / "results")


@pytest.mark.parametrize(
    ("selector", "options"),
    [
        ("cost-axioms", VerifyOptions(samples=500)),
        ("vertex-witness", VerifyOptions(cases=6)),
        ("subgradient", VerifyOptions(samples=1000)),
        ("malicious-replay", VerifyOptions(cases=10)),
        ("enclosed-radius", VerifyOptions(samples=500)),
    ],
)
def test_verify_suites_pass(selector, options):
    """Pass each quick suite with reduced sample counts."""
    report = run_verify(selector, options)
    assert [suite.name for suite in report.suites] == [selector]
    assert report.passed, report.suites[0].failures
    assert report.suites[0].checks > 0


def test_verify_detects_a_nonconvex_positive_set():
    """Fail the vertex check once a negative pocket breaks convexity."""
    report = run_verify("vertex-witness", VerifyOptions(cases=4, inject_nonconvex=True))
    assert not report.passed
    assert len(report.suites[0].failures) == 4


def test_verify_rejects_unknown_suites():
    """Name the valid choices for an unknown selector."""
    with pytest.raises(InvalidInputError, match="cost-axioms"):
        run_verify("everything")


def test_suite_registry():
    """Register every suite under its command-line name."""
    assert set(SUITES) == {
        "cost-axioms",
        "vertex-witness",
        "subgradient",
        "malicious-replay",
        "hit-and-run",
        "halfspace-mac",
        "enclosed-radius",
    }


@pytest.mark.parametrize(("alias", "name"), [("lemma2", "vertex-witness"), ("lemma10", "halfspace-mac")])
def test_verify_aliases_run_their_suite(alias, name):
    """Run the suite an alias stands for, and only that one."""
    report = run_verify(alias, VerifyOptions(cases=4, samples=200))
    assert [suite.name for suite in report.suites] == [name]
    assert report.passed, report.suites[0].failures


def test_enclosed_radius_draws_a_hundred_thousand_samples():
    """Sample the ball a hundred thousand times unless told otherwise."""
    assert VerifyOptions().samples == 100_000
