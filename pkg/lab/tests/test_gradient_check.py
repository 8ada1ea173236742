import time

import numpy as np
import pytest

from mer_lab.tools.gradient_check import TOLERANCE, central_difference, relative_error, run_grad_check
from mer_lab.utils.validators import ContractError


class TestCentralDifference:
    def test_quadratic(self):
        x = np.array([[1.0, -2.0], [0.5, 3.0]])
        grad = central_difference(lambda v: float(np.sum(v**2)), x, 1e-5)
        np.testing.assert_allclose(grad, 2 * x, rtol=1e-9)

    def test_relative_error_of_exact_match(self):
        assert relative_error(np.ones(3), np.ones(3)) == 0.0


class TestRunGradCheck:
    def test_default_suite_passes(self):
        start = time.perf_counter()
        report = run_grad_check()
        assert time.perf_counter() - start < 5.0
        assert report.passed
        assert report.worst.error < TOLERANCE
        assert len(report.cases) == 60
        assert set(report.to_dict()["worst_by_component"]) == {"marginal", "spectral", "combined"}

    def test_huge_step_fails(self):
        report = run_grad_check(seeds=2, step=10.0)
        assert not report.passed
        assert report.to_dict()["failing_seeds"]

    def test_no_seeds(self):
        with pytest.raises(ContractError, match="need ≥1 seed"):
            run_grad_check(seeds=0)
