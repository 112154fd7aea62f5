import numpy as np

from skb.optim import Adam, AdamState, adam_step
from skb.tensor import Parameter


def test_first_step_magnitude_is_learning_rate():
    p = Parameter(np.array([1.0]), "p", dtype=np.float64)
    p.grad = np.array([0.5])
    state = AdamState.for_param(p, learning_rate=1e-4)
    adam_step(p, state)
    # Bias-corrected first step: lr * g / (|g| + eps)
    assert abs(abs(1.0 - p.data[0]) - 1e-4) < 1e-9
    assert state.step_count == 1


def test_zero_grad_fresh_state_leaves_param_unchanged():
    p = Parameter(np.array([2.0, -1.0]), "p", dtype=np.float64)
    state = AdamState.for_param(p)
    adam_step(p, state)
    np.testing.assert_array_equal(p.data, [2.0, -1.0])
    np.testing.assert_array_equal(state.first_moment, np.zeros(2))


def test_moments_decay_on_zero_grad():
    p = Parameter(np.array([0.0]), "p", dtype=np.float64)
    p.grad = np.array([1.0])
    state = AdamState.for_param(p)
    adam_step(p, state)
    m1 = abs(state.first_moment[0])
    p.grad = np.array([0.0])
    adam_step(p, state)
    assert abs(state.first_moment[0]) < m1


def test_three_steps_match_hand_stepped_reference():
    # Quadratic 2 (x - 3)^2, analytic gradient 4 (x - 3), all in float64.
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    p = Parameter(np.array([0.0]), "p", dtype=np.float64)
    state = AdamState.for_param(p, learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)

    x_ref, m_ref, v_ref = 0.0, 0.0, 0.0
    for t in range(1, 4):
        g = 4.0 * (p.data[0] - 3.0)
        p.grad = np.array([g])
        adam_step(p, state)

        g_ref = 4.0 * (x_ref - 3.0)
        m_ref = b1 * m_ref + (1 - b1) * g_ref
        v_ref = b2 * v_ref + (1 - b2) * g_ref * g_ref
        m_hat = m_ref / (1 - b1**t)
        v_hat = v_ref / (1 - b2**t)
        x_ref = x_ref - lr * m_hat / (np.sqrt(v_hat) + eps)
        assert abs(p.data[0] - x_ref) < 1e-10
    assert state.step_count == 3


def test_optimizer_steps_all_params_and_roundtrips_state():
    rng = np.random.default_rng(0)
    a = Parameter(rng.normal(size=(2, 2)).astype(np.float32), "a")
    b = Parameter(rng.normal(size=3).astype(np.float32), "b")
    opt = Adam([a, b], learning_rate=1e-3)
    a.grad = np.ones_like(a.data)
    b.grad = np.ones_like(b.data)
    before_a = a.data.copy()
    opt.step()
    assert not np.array_equal(a.data, before_a)
    moments, steps = opt.export_state()
    assert set(steps) == {"a", "b"}
    opt2 = Adam([a, b], learning_rate=1e-3)
    opt2.load_state(moments, steps)
    np.testing.assert_array_equal(
        opt2.states["a"].first_moment, opt.states["a"].first_moment
    )
    assert opt2.states["b"].step_count == 1


def test_zero_grads_via_optimizer():
    p = Parameter(np.ones(2), "p")
    p.grad = np.ones(2)
    opt = Adam([p])
    opt.zero_grads()
    np.testing.assert_array_equal(p.grad, np.zeros(2))
