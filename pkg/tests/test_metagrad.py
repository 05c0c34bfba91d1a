import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajshift.core import LinearTask, QuadraticTask, UsageError
from trajshift.metagrad import MetaGradKind, average_meta_grad, meta_grad


def test_reptile_examples():
    phi = np.array([1.0, 1.0])
    np.testing.assert_array_equal(meta_grad("reptile", phi, phi.copy(), LinearTask([1.0, 0.0]), 3), [0, 0])
    np.testing.assert_array_equal(meta_grad("reptile", phi, np.array([0.0, 2.0]), LinearTask([1.0, 0.0]), 3), [1, -1])


def test_fomaml_uses_task_gradient():
    task = LinearTask([2.0, 0.0])
    for theta in ([0.0, 0.0], [5.0, -3.0]):
        np.testing.assert_array_equal(meta_grad("fomaml", np.zeros(2), np.array(theta), task, 7), [2, 0])


def test_dimension_mismatch():
    with pytest.raises(UsageError):
        meta_grad("reptile", np.zeros(2), np.zeros(3), LinearTask([1.0, 0.0]), 1)
    with pytest.raises(ValueError):
        MetaGradKind("maml")


def test_reptile_ignores_the_loss():
    phi, theta = np.array([0.3, -1.2]), np.array([1.1, 0.4])
    a = meta_grad("reptile", phi, theta, LinearTask([1.0, 2.0]), 0)
    b = meta_grad("reptile", phi, theta, QuadraticTask(np.diag([5.0, 0.1])), 9)
    assert a.tobytes() == b.tobytes()


def test_average_examples():
    tasks = [LinearTask([0.0, 0.0], task_id=i) for i in range(2)]
    phi = np.zeros(2)
    one = average_meta_grad("reptile", phi, [np.array([-1.0, 0.0])], tasks[:1], 1)
    np.testing.assert_array_equal(one, meta_grad("reptile", phi, np.array([-1.0, 0.0]), tasks[0], 1))
    sym = average_meta_grad("reptile", phi, [np.array([-1.0, 0.0]), np.array([1.0, 0.0])], tasks, 1)
    np.testing.assert_array_equal(sym, [0, 0])
    two = average_meta_grad("reptile", phi, [np.array([-1.0, -1.0]), np.array([-3.0, -3.0])], tasks, 1)
    np.testing.assert_array_equal(two, [2, 2])
    with pytest.raises(UsageError):
        average_meta_grad("reptile", phi, [], [], 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.randoms(use_true_random=False), st.sampled_from(["reptile", "fomaml"]))
def test_average_is_order_independent(n, rnd, kind):
    rng = np.random.default_rng(rnd.randrange(2**32))
    tasks = [LinearTask(rng.standard_normal(4) * 10 ** rng.uniform(-8, 8), task_id=i) for i in range(n)]
    thetas = [rng.standard_normal(4) * 10 ** rng.uniform(-8, 8) for _ in range(n)]
    phi = rng.standard_normal(4)
    ref = average_meta_grad(kind, phi, thetas, tasks, 2)
    order = list(range(n))
    rnd.shuffle(order)
    perm = average_meta_grad(kind, phi, [thetas[i] for i in order], [tasks[i] for i in order], 2)
    assert perm.tobytes() == ref.tobytes()
