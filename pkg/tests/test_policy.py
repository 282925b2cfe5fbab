import math

import numpy as np
import pytest

from adaptive_accept import (
    ActionChunk,
    ConditioningError,
    CountingPolicy,
    GaussianChunkPolicy,
    InsufficientData,
    InvalidInput,
    MixturePolicy,
    PolicyQuery,
    State,
    VerifyContext,
    ar1_covariance,
    brute_force_conditional,
    redecode,
    sample_chunks,
)
from adaptive_accept.verifier import INVARIANCE, SEQUENTIAL

BASE = State([0.0])
PLAN = np.array([0.2, -0.1, 0.4, 0.3])


def ar1_policy(rho=0.8, sigma=0.1, growth=1.0, plan=PLAN, **kw):
    return GaussianChunkPolicy.ar1(lambda _s: plan, len(plan), 1, sigma, rho, growth, **kw)


def ctx(target, fixed, values, kind=INVARIANCE):
    values = np.asarray(values, dtype=float).reshape(len(fixed), -1) if fixed else np.empty((0, 1))
    return VerifyContext(kind, target, tuple(fixed), values)


def test_zero_covariance_returns_mean_plan():
    policy = GaussianChunkPolicy.constant([[0.1, 0.2], [0.3, 0.4]])
    chunks = sample_chunks(policy, State([0.0, 0.0]), 5, seed=1)
    assert len(chunks) == 5
    for c in chunks:
        np.testing.assert_array_equal(c.deltas, [[0.1, 0.2], [0.3, 0.4]])


def test_sampling_is_seed_deterministic():
    policy = ar1_policy()
    a = sample_chunks(policy, BASE, 6, seed=42)
    b = sample_chunks(policy, BASE, 6, seed=42)
    c = sample_chunks(policy, BASE, 6, seed=43)
    assert all(x.deltas.tobytes() == y.deltas.tobytes() for x, y in zip(a, b))
    assert any(x.deltas.tobytes() != y.deltas.tobytes() for x, y in zip(a, c))


def test_ar1_lag_one_correlation():
    policy = ar1_policy(rho=0.9, sigma=0.1)
    deltas, _ = policy.sample_array(BASE, 10_000, np.random.default_rng(0))
    x = deltas[:, :, 0] - PLAN
    lag1 = np.mean([np.corrcoef(x[:, j], x[:, j + 1])[0, 1] for j in range(len(PLAN) - 1)])
    assert abs(lag1 - 0.9) < 0.05


def test_growth_makes_marginal_std_increase():
    policy = ar1_policy(rho=0.5, sigma=0.1, growth=1.3)
    deltas, _ = policy.sample_array(BASE, 20_000, np.random.default_rng(3))
    std = deltas[:, :, 0].std(axis=0)
    assert np.all(np.diff(std) > 0)
    np.testing.assert_allclose(std, 0.1 * 1.3 ** np.arange(4), rtol=0.05)


def test_ar1_covariance_layout():
    cov = ar1_covariance(3, 2, 0.1, 0.5, 2.0, dim_scale=[1.0, 3.0])
    assert cov.shape == (6, 6)
    # step 1 dim 1 variance
    assert cov[3, 3] == pytest.approx((0.1 * 2.0 * 3.0) ** 2)
    # cross-step same dim: 0.1*0.2*0.5*9
    assert cov[1, 3] == pytest.approx(0.1 * 0.2 * 0.5 * 9)
    assert cov[0, 1] == 0.0


def test_redecode_empty_context_is_unconditional_mean():
    out = redecode(ar1_policy(), BASE, ctx(2, [], []))
    assert out.deltas[0] == pytest.approx(PLAN[2])


def test_redecode_independent_steps_ignore_context():
    out = redecode(ar1_policy(rho=0.0), BASE, ctx(3, [0, 1], [[5.0], [-5.0]]))
    assert out.deltas[0] == pytest.approx(PLAN[3])


def test_redecode_bivariate_shift():
    sigma, rho = 0.1, 0.8
    plan = np.array([0.3, 0.5])
    policy = ar1_policy(rho=rho, sigma=sigma, plan=plan)
    context = ctx(1, [0], [plan[0] + sigma], SEQUENTIAL)
    got = redecode(policy, BASE, context).deltas[0]
    assert got == pytest.approx(plan[1] + rho * sigma, abs=1e-12)
    est = brute_force_conditional(policy, BASE, context, 100_000, 0.05 * sigma, seed=5)
    assert abs(est.mean[0] - got) < 3 * est.stderr[0]


def test_redecode_is_deterministic_and_batch_matches():
    policy = ar1_policy()
    contexts = [ctx(2, [0, 1], [[0.3], [0.0]]), ctx(0, [3], [[0.1]])]
    batch = policy.forward(PolicyQuery(BASE, contexts=tuple(contexts)))
    for row, c in zip(batch, contexts):
        np.testing.assert_array_equal(row, policy.redecode_one(BASE, c))
        np.testing.assert_array_equal(row, redecode(policy, BASE, c).deltas)


def test_sample_mode_redecode_is_seeded():
    policy = ar1_policy(redecode_mode="sample")
    c = ctx(2, [0], [[0.3]])
    assert policy.redecode_one(BASE, c, seed=4).tobytes() == policy.redecode_one(BASE, c, seed=4).tobytes()
    assert policy.redecode_one(BASE, c, seed=4).tobytes() != policy.redecode_one(BASE, c, seed=5).tobytes()


def test_singular_conditioning_reports_error():
    cov = np.ones((3, 3)) * 0.01  # rank one: fixing two steps is singular
    policy = GaussianChunkPolicy(lambda _s: np.zeros(3), cov)
    c = ctx(2, [0, 1], [[0.0], [0.1]])
    with pytest.raises(ConditioningError):
        policy.redecode_one(BASE, c)
    out = policy.forward(PolicyQuery(BASE, contexts=(c, ctx(2, [0], [[0.1]]))))
    assert np.isnan(out[0, 0])
    assert out[1, 0] == pytest.approx(0.1)


@pytest.mark.parametrize(
    "cov",
    [np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones((3, 3))],
)
def test_invalid_covariances_rejected(cov):
    with pytest.raises(InvalidInput):
        GaussianChunkPolicy(lambda _s: np.zeros(2), cov, dim=2 if cov.shape[0] == 3 else 1)


def test_mean_plan_shape_checked():
    policy = GaussianChunkPolicy(lambda _s: np.zeros(3), np.eye(4) * 0.01)
    with pytest.raises(InvalidInput):
        sample_chunks(policy, BASE, 2)


def test_query_validation():
    with pytest.raises(InvalidInput):
        PolicyQuery(BASE)
    with pytest.raises(InvalidInput):
        sample_chunks(ar1_policy(), BASE, 0)


def test_brute_force_diagonal_matches_unconditional():
    policy = ar1_policy(rho=0.0)
    est = brute_force_conditional(policy, BASE, ctx(1, [0], [[0.25]]), 100_000, 0.01, seed=2)
    assert abs(est.mean[0] - PLAN[1]) < 3 * est.stderr[0]


def test_brute_force_deterministic_policy_exact():
    policy = GaussianChunkPolicy.constant(PLAN)
    est = brute_force_conditional(policy, BASE, ctx(2, [0], [[PLAN[0]]]), 10, 0.01, seed=0)
    assert est.mean[0] == PLAN[2] == redecode(policy, BASE, ctx(2, [0], [[PLAN[0]]])).deltas[0]
    assert est.accepted == 10


def test_brute_force_insufficient_data():
    with pytest.raises(InsufficientData):
        brute_force_conditional(ar1_policy(), BASE, ctx(1, [0], [[50.0]]), 1000, 0.001, seed=0)
    with pytest.raises(InvalidInput):
        brute_force_conditional(ar1_policy(), BASE, ctx(1, [0], [[0.0]]), 1000, 0.0)


def two_mode_mixture(weights=(0.5, 0.5)):
    up = ar1_policy(plan=np.full(4, 1.0))
    down = ar1_policy(plan=np.full(4, -1.0))
    return MixturePolicy([(weights[0], up), (weights[1], down)])


def test_mixture_draws_components_by_weight():
    mix = two_mode_mixture((0.25, 0.75))
    deltas, _ = mix.sample_array(BASE, 4000, np.random.default_rng(0))
    frac_up = np.mean(deltas[:, 0, 0] > 0)
    assert abs(frac_up - 0.25) < 0.03


def test_mixture_conditions_in_responsible_component():
    mix = two_mode_mixture()
    down = redecode(mix, BASE, ctx(2, [0, 1], [[-1.05], [-0.95]]))
    up = redecode(mix, BASE, ctx(2, [0, 1], [[1.1], [1.0]]))
    assert down.deltas[0] == pytest.approx(mix.components[1].redecode_one(BASE, ctx(2, [0, 1], [[-1.05], [-0.95]]))[0])
    assert up.deltas[0] > 0 > down.deltas[0]


def test_mixture_without_context_uses_heavier_component():
    mix = two_mode_mixture((0.3, 0.7))
    assert redecode(mix, BASE, ctx(1, [], [])).deltas[0] == pytest.approx(-1.0)
    tie = two_mode_mixture()
    assert redecode(tie, BASE, ctx(1, [], [])).deltas[0] == pytest.approx(1.0)


def test_mixture_gate_overrides_static_weights():
    up = ar1_policy(plan=np.full(4, 1.0))
    down = ar1_policy(plan=np.full(4, -1.0))
    mix = MixturePolicy([(0.5, up), (0.5, down)], gate=lambda s: [0.01, 0.99] if s.pose[0] > 0 else [0.99, 0.01])
    assert redecode(mix, State([1.0]), ctx(0, [], [])).deltas[0] == pytest.approx(-1.0)
    assert redecode(mix, State([-1.0]), ctx(0, [], [])).deltas[0] == pytest.approx(1.0)


def test_mixture_rejects_bad_weights():
    p = ar1_policy()
    with pytest.raises(InvalidInput):
        MixturePolicy([(0.5, p), (0.4, p)])
    with pytest.raises(InvalidInput):
        MixturePolicy([])


def test_counting_policy_counts_forward_calls():
    policy = CountingPolicy(ar1_policy())
    sample_chunks(policy, BASE, 8, seed=0)
    policy.forward(PolicyQuery(BASE, contexts=(ctx(1, [], []), ctx(2, [0], [[0.0]]))))
    assert policy.calls == 2
    assert [q.mode for q in policy.queries] == ["sample", "redecode"]


def test_noise_scale_scales_samples_but_not_conditional_mean():
    base = ar1_policy()
    loud = ar1_policy(noise_scale=lambda _s: 3.0)
    a, _ = base.sample_array(BASE, 3, np.random.default_rng(9))
    b, _ = loud.sample_array(BASE, 3, np.random.default_rng(9))
    np.testing.assert_allclose(b - PLAN[None, :, None], 3.0 * (a - PLAN[None, :, None]))
    c = ctx(2, [1], [[0.05]])
    assert base.redecode_one(BASE, c)[0] == pytest.approx(loud.redecode_one(BASE, c)[0])


def test_gripper_plan_passes_through():
    policy = GaussianChunkPolicy.constant(PLAN, gripper_plan=np.array([False, False, True, True]))
    chunk = sample_chunks(policy, BASE, 1)[0]
    assert chunk.gripper.tolist() == [False, False, True, True]
    assert redecode(policy, BASE, ctx(2, [], [])).gripper
    assert not redecode(policy, BASE, ctx(1, [], [])).gripper
