"""Shared test utilities: gradient comparison against the
central-difference oracle."""

import numpy as np

from fedmm.nn import MlpGrads


def grad_errors(analytic: MlpGrads, numeric: MlpGrads, abs_floor=1e-8):
    """Worst relative error between two gradient trees.

    Entries whose analytic magnitude is below abs_floor are compared
    absolutely (returned separately).
    """
    worst_rel = 0.0
    worst_abs = 0.0
    for a, n in zip(analytic.layers, numeric.layers):
        for ag, ng in ((a.d_weights, n.d_weights), (a.d_bias, n.d_bias)):
            big = np.abs(ag) >= abs_floor
            if big.any():
                rel = np.abs(ag[big] - ng[big]) / np.abs(ag[big])
                worst_rel = max(worst_rel, float(rel.max()))
            if (~big).any():
                worst_abs = max(worst_abs, float(np.abs(ag[~big] - ng[~big]).max()))
    return worst_rel, worst_abs


def assert_grads_close(analytic, numeric, rel_tol=1e-4, abs_tol=1e-8):
    worst_rel, worst_abs = grad_errors(analytic, numeric, abs_floor=1e-8)
    assert worst_rel <= rel_tol, f"relative gradient error {worst_rel:.3e}"
    assert worst_abs <= abs_tol, f"absolute gradient error {worst_abs:.3e}"
