"""Acceptance suite: the twelve end-to-end criteria.

Each test prints a single ``[PASS]``/``[FAIL]`` line (shown even under
pytest's output capture). Run ``python tests/test_acceptance.py`` to get the
twelve lines without pytest.
"""
import sys

import pytest

from gdrec import repro

_LINES = []


@pytest.fixture(scope="module")
def world_run():
    return repro.WorldRun(repro.AcceptanceConfig())


@pytest.fixture
def report(capsys):
    def emit(res):
        _LINES.append(res.line())
        with capsys.disabled():
            sys.stdout.write("\n" + res.line() + "\n")
        assert res.passed, res.line()
        if res.limit is not None:
            assert res.seconds <= res.limit, f"took {res.seconds:.1f}s, limit {res.limit}s"
    return emit


def test_01_distance_oracles(report):
    report(repro.check_distance_oracles())


def test_02_nj_exactness(report):
    report(repro.check_nj_exactness())


def test_03_gradient_checks(report):
    report(repro.check_gradients())


@pytest.mark.slow
def test_04_end_to_end(report, world_run):
    report(repro.check_end_to_end(world_run))


@pytest.mark.slow
def test_05_head_tradeoff(report, world_run):
    report(repro.check_head_tradeoff(world_run))


@pytest.mark.slow
def test_06_fusion_benefit(report, world_run):
    report(repro.check_fusion_benefit(world_run))


@pytest.mark.slow
def test_07_embedding_length(report, world_run):
    report(repro.check_embedding_length(world_run))


@pytest.mark.slow
def test_08_zero_shot(report, world_run):
    report(repro.check_zero_shot(world_run))


def test_09_joint_tree(report):
    report(repro.check_joint_tree())


@pytest.mark.slow
def test_10_dna_decoding(report, world_run):
    report(repro.check_dna_decoding(world_run))


def test_11_bootstrap(report):
    report(repro.check_bootstrap())


def test_12_metric_oracles(report):
    report(repro.check_metric_oracles())


if __name__ == "__main__":
    results = repro.run_all(log=print)
    sys.exit(0 if all(r.passed for r in results) else 1)
