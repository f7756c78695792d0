import pytest

from volseg.autograd.functional import Linear
from volseg.verify import (
    CASES,
    GRADCHECK_THRESHOLD,
    GradcheckTarget,
    group_errors,
    run_gradcheck,
)


def double_weight_gradient(monkeypatch):
    backward = Linear.backward

    def wrong_backward(self, grad):
        grads = list(backward(self, grad))
        grads[1] = 2 * grads[1]
        return tuple(grads)

    monkeypatch.setattr(Linear, "backward", wrong_backward)


def test_group_errors():
    errors = group_errors(
        {
            "conv_chi.weight": 1e-7,
            "conv_chi.bias": 3e-6,
            "input": 2e-9,
            "conv_psi.bias": 0.0,
        }
    )

    assert errors == {"conv_chi": 3e-6, "input": 2e-9, "conv_psi": 0}


def test_every_target_has_a_case():
    assert set(CASES) == set(GradcheckTarget) - {GradcheckTarget.ALL}


@pytest.mark.parametrize("target", ["onsampling", "scp_ag", "dsa", "losses"])
def test_gradcheck_passes(target):
    results = run_gradcheck(target)

    assert results
    assert {result.case for result in results} == {target}
    for result in results:
        assert result.passed(), (result.group, result.max_rel_error)


def test_gradcheck_groups():
    groups = {result.group for result in run_gradcheck("scp_ag")}

    assert groups == {
        "chi",
        "lambda",
        "conv_chi",
        "conv_lambda",
        "conv_psi",
        "linear_chi",
        "linear_lambda",
    }


def test_sampled_gradcheck_covers_every_case():
    results = run_gradcheck("all", max_elements=3)

    assert {result.case for result in results} == {
        "onsampling",
        "scp_ag",
        "dsa",
        "losses",
    }
    assert all(result.max_rel_error < GRADCHECK_THRESHOLD for result in results)


def test_wrong_backward_is_caught(monkeypatch):
    double_weight_gradient(monkeypatch)

    results = {result.group: result for result in run_gradcheck("scp_ag")}

    assert not results["linear_chi"].passed()
    assert not results["linear_lambda"].passed()
    assert results["conv_psi"].passed()


def test_losses_pass_at_the_larger_step():
    results = run_gradcheck("losses", eps=1e-4)

    assert results
    assert all(result.passed() for result in results)