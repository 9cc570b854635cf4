import dataclasses

import numpy as np
import pytest

import acceptance
from acceptance import CRITERIA, CheckContext, Criterion, list_criteria, parity_level, run_acceptance, run_criterion
from cli import EXIT_ACCEPTANCE, main
from config import reset_config
from errors import NonConvergent
from free_group import StepDistribution
from rates import RateFunctions


def test_criteria_are_numbered():
    assert [c.id for c in CRITERIA] == list(range(1, 16))
    assert len(list_criteria()) == 15


@pytest.mark.parametrize("n,q,mu_e,expected", [
    (25, 0.5, 0.0, 13),
    (24, 0.5, 0.0, 12),
    (25, 0.5, 0.2, 12),
    (5, 1.0, 0.0, 5),
])
def test_parity_level(n, q, mu_e, expected):
    assert parity_level(n, q, mu_e) == expected


def test_fast_subset_passes(default_config):
    results = run_acceptance(default_config, ids=[1, 2, 3, 5, 11], include_slow=False)
    assert [r.id for r in results] == [1, 2, 3, 5, 11]
    assert all(r.passed for r in results), [r.as_dict() for r in results if not r.passed]


def test_skip_slow_drops_slow_criteria(default_config):
    results = run_acceptance(default_config, ids=[4, 5], include_slow=False)
    assert [r.id for r in results] == [5]


def test_criterion_errors_become_failures(default_config):
    def exploding(ctx):
        raise NonConvergent("test", 3, 0.0, 1.0)

    criterion = Criterion(99, "exploding", exploding)
    result = run_criterion(criterion, CheckContext.from_config(default_config))
    assert not result.passed
    assert result.error.startswith("NonConvergent")


@pytest.mark.parametrize("error", [
    ValueError("f(a) and f(b) must have different signs"),
    np.linalg.LinAlgError("Singular matrix"),
    FloatingPointError("overflow encountered in exp"),
])
def test_library_errors_become_failures(default_config, error):
    def failing(ctx):
        raise error

    result = run_criterion(Criterion(98, "failing", failing), CheckContext.from_config(default_config))
    assert not result.passed
    assert result.error == f"{type(error).__name__}: {error}"


def test_failing_criterion_does_not_stop_the_run(default_config, monkeypatch):
    def failing(ctx):
        raise ValueError("f(a) and f(b) must have different signs")

    criteria = [Criterion(1, "failing", failing), CRITERIA[1]]
    monkeypatch.setattr(acceptance, "CRITERIA", criteria)
    results = run_acceptance(default_config)
    assert [r.passed for r in results] == [False, True]


def test_cli_reports_failed_criterion(tmp_path, monkeypatch):
    def failing(ctx):
        raise ValueError("f(a) and f(b) must have different signs")

    monkeypatch.setattr(acceptance, "CRITERIA", [Criterion(1, "failing", failing)])
    assert main(["--out", str(tmp_path), "check"]) == EXIT_ACCEPTANCE


def test_context_streams_are_reproducible(default_config):
    ctx = CheckContext.from_config(default_config)
    a = ctx.random_laws(3, stream=1)
    b = ctx.random_laws(3, stream=1)
    assert a == b
    assert ctx.random_laws(3, stream=2) != a


def test_dimension_routes_criterion(default_config):
    result = run_acceptance(default_config, ids=[7])[0]
    assert result.passed, result.details


def test_conditional_profile_criterion(default_config):
    result = run_acceptance(default_config, ids=[14])[0]
    assert result.passed, result.details


def test_many_to_one_reports_size_and_z_scores():
    config = reset_config(None, {"acceptance": {"many_to_one_n": 4, "many_to_one_replicates": 400}})
    details = acceptance._many_to_one(CheckContext.from_config(config))
    assert details["n"] == 4 and details["replicates"] == 400
    assert not details["literal_form"]
    assert details["literal_size"] == {"n": 20, "replicates": 10_000}
    assert len(details["z_scores"]) == 5
    # odd levels are never reached at even n
    assert details["z_scores"][1] == 0.0 and details["z_scores"][3] == 0.0
    assert details["max_abs_z"] == max(abs(z) for z in details["z_scores"])
    assert details["passed"], details


def test_level_lln_reports_gap_to_log_mean():
    config = reset_config(None, {"acceptance": {"lln_depths": [6, 8], "lln_replicates": 8}})
    details = acceptance._level_lln(CheckContext.from_config(config))
    assert details["depths"] == [6, 8]
    assert set(details["literal_gap"]) == {6, 8}
    assert all(gap >= 0 for gap in details["literal_gap"].values())
    assert isinstance(details["literal_trend"], bool)


def test_hypothesis_criterion_checks_upper_limit_of_every_law(default_config, monkeypatch):
    original = RateFunctions.hypothesis_one

    def drifting(self, *args, **kwargs):
        report = original(self, *args, **kwargs)
        if self.mu.is_isotropic:
            return report
        return dataclasses.replace(report, upper_limit=0.05)

    monkeypatch.setattr(RateFunctions, "hypothesis_one", drifting)
    monkeypatch.setattr(CheckContext, "random_laws",
                        lambda self, count, stream, rank=2: [StepDistribution.from_generator_weights(2, [0.35, 0.15])])
    details = acceptance._hypothesis_one(CheckContext.from_config(default_config))
    assert not details["passed"]
    assert not details["boundary_limits"]
    assert details["max_abs_upper_limit"] == pytest.approx(0.05)
