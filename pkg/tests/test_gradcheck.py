import numpy as np
import pytest

from arnet.gradcheck import SCOPES, relative_error, run_scope


@pytest.mark.parametrize("scope", SCOPES)
def test_scope_passes(scope):
    report = run_scope(scope, trials=4, seed=11)
    assert report.passed, report.to_dict()
    assert report.worst and max(report.worst.values()) < 1e-4


@pytest.mark.parametrize("scope,tensor", [("lstm", "T"), ("attention", "W_h"), ("seq2seq", "out.W")])
def test_corrupted_gradient_is_caught_and_named(scope, tensor):
    report = run_scope(scope, trials=2, seed=0, corrupt=tensor)
    assert not report.passed
    assert tensor in report.failures
    assert report.to_dict()["failures"] == report.failures


def test_unknown_corrupt_target_is_an_error():
    with pytest.raises(KeyError):
        run_scope("arnet", trials=1, corrupt="nope")


def test_argument_validation():
    with pytest.raises(ValueError):
        run_scope("lstm", trials=0)
    with pytest.raises(ValueError):
        run_scope("lstm", tolerance=0.0)
    with pytest.raises(ValueError):
        run_scope("lstm", tolerance=-1e-4)
    with pytest.raises(ValueError):
        run_scope("transformer")


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0])).max() == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])).max() == pytest.approx(2.0)
