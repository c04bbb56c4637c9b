"""
Tests for process-credit token weighting.
"""
import numpy as np
import pytest

from grpo_reshape.core.credit import (
    NEGATIVE_FLOOR,
    eligibility_gate,
    mean_score,
    neutral_weights,
    step_weights,
    token_weights,
    trajectory_token_weights,
)
from grpo_reshape.core.grpo import build_group
from grpo_reshape.exceptions import MalformedTrajectoryError, NoActiveTokensError
from grpo_reshape.models.credit import StepWeights


def test_mean_score():
    """Test token-weighted mean scores."""
    assert mean_score([0.2, 0.8], [2, 2]) == pytest.approx(0.5)
    assert mean_score([0.7], [5]) == pytest.approx(0.7)
    assert mean_score([0.3, 0.3, 0.3], [1, 4, 0]) == pytest.approx(0.3)


def test_mean_score_without_tokens():
    """Test that zero active tokens is signalled."""
    with pytest.raises(NoActiveTokensError):
        mean_score([0.5, 0.5], [0, 0])


def test_step_weights_positive():
    """Test the positive branch."""
    weights = step_weights([0.2, 0.8], [2, 2], "positive")

    assert weights.branch == "positive"
    assert weights.alpha == pytest.approx([0.4, 1.6])


def test_step_weights_negative():
    """Test the inverted branch without rescaling."""
    weights = step_weights([0.2, 0.8], [2, 2], "negative")

    assert weights.branch == "negative"
    assert weights.alpha == pytest.approx([1.6, 0.4])


def test_step_weights_negative_floor():
    """Test the floor and its normalising constant."""
    weights = step_weights([1.0, 0.0], [1, 1], "negative")

    assert weights.alpha == pytest.approx([0.095238, 1.904762], abs=1e-6)
    assert weights.alpha[0] / weights.alpha[1] == pytest.approx(NEGATIVE_FLOOR / 2.0)


@pytest.mark.parametrize("sign", ["positive", "negative"])
def test_step_weights_uniform_scores(sign):
    """Test that uniform scores give unit multipliers."""
    weights = step_weights([0.6, 0.6, 0.6], [3, 1, 2], sign)

    assert weights.alpha == pytest.approx([1.0, 1.0, 1.0])


def test_step_weights_all_zero_scores_fall_back():
    """Test the neutral fallback when the mean score is zero."""
    weights = step_weights([0.0, 0.0], [2, 3], "positive")

    assert weights.branch == "neutral"
    assert weights.alpha == [1.0, 1.0]


def test_step_weights_rejects_bad_input():
    """Test length and range validation."""
    with pytest.raises(ValueError):
        step_weights([0.5], [1, 2], "positive")
    with pytest.raises(ValueError):
        step_weights([-0.1, 0.5], [1, 2], "positive")


def test_mass_preservation_randomized():
    """Test mass preservation on random scores in both branches."""
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 10_000:
        # Setup
        steps = int(rng.integers(1, 7))
        s = rng.random(steps)
        n = rng.integers(0, 9, size=steps)
        if n.sum() == 0 or np.dot(n, s) == 0:
            continue
        checked += 1

        s_bar = float(np.dot(n, s) / n.sum())
        raw = np.maximum(2.0 - s / s_bar, NEGATIVE_FLOOR)
        c = float(n.sum() / np.dot(n, raw))

        for sign in ("positive", "negative"):
            # Execute
            alpha = np.asarray(step_weights(s, n, sign).alpha)

            # Verify
            assert abs(float(np.dot(n, alpha)) - float(n.sum())) <= 1e-9
            if sign == "negative":
                assert alpha == pytest.approx(c * raw, rel=1e-9)
                assert np.min(alpha / c) >= NEGATIVE_FLOOR - 1e-12


def test_negative_branch_monotone_inversion():
    """Test that the inverted branch reverses the score order."""
    s = [0.1, 0.4, 0.6, 0.9]
    n = [1, 1, 1, 1]
    positive = step_weights(s, n, "positive").alpha
    negative = step_weights(s, n, "negative").alpha

    assert positive == sorted(positive)
    assert negative == sorted(negative, reverse=True)


def test_token_weights_broadcast():
    """Test elementwise weights over steps and the mask."""
    weights = StepWeights(alpha=[0.4, 1.6], branch="positive")

    out = token_weights(weights, [1, 1, 0], [0, 1, 1])

    assert out.tolist() == pytest.approx([0.4, 1.6, 0.0])


def test_token_weights_neutral_recovers_mask():
    """Test that neutral weights reproduce the mask."""
    mask = [1, 0, 1, 1, 0]

    out = token_weights(neutral_weights(3), mask, [0, 0, 1, 2, 2])

    assert out.tolist() == mask


def test_token_weights_all_echo():
    """Test that echo tokens never receive weight."""
    out = token_weights(StepWeights(alpha=[3.0], branch="positive"), [0, 0], [0, 0])

    assert out.tolist() == [0.0, 0.0]


def test_token_weights_missing_step():
    """Test that an active token without a multiplier is rejected."""
    with pytest.raises(MalformedTrajectoryError):
        token_weights(StepWeights(alpha=[1.0], branch="positive"), [1, 1], [0, 1])


def test_eligibility_gate(make_trajectory):
    """Test the compile-and-scores gate."""
    failed = make_trajectory([(2, 1), (1, 1)], scores=[0.5, 0.5], compile_ok=False)
    missing = make_trajectory([(2, 1), (1, 1)], scores=[0.5, None])
    full = make_trajectory([(2, 1), (1, 1)], scores=[0.5, 0.9])
    routed = make_trajectory(
        [(2, 1), (1, 1)], scores=[0.5, 0.9], loss_mask_override=[0, 0, 0, 1, 0]
    )

    assert eligibility_gate(failed) == "neutral"
    assert eligibility_gate(missing) == "neutral"
    assert eligibility_gate(full) == "apply_scores"
    assert eligibility_gate(routed) == "neutral"


def test_trajectory_token_weights(make_trajectory):
    """Test the per-trajectory path through gate, branch and broadcast."""
    # Setup
    traj = make_trajectory([(2, 1), (2, 0)], scores=[0.2, 0.8])

    # Execute
    positive = trajectory_token_weights(traj, 1.3)
    negative = trajectory_token_weights(traj, -0.4)
    zero = trajectory_token_weights(traj, 0.0)
    disabled = trajectory_token_weights(traj, 1.3, enabled=False)

    # Verify
    assert positive.tolist() == pytest.approx([0.4, 0.4, 0.0, 1.6, 1.6])
    assert negative.tolist() == pytest.approx([1.6, 1.6, 0.0, 0.4, 0.4])
    assert zero.tolist() == [1, 1, 0, 1, 1]
    assert disabled.tolist() == [1, 1, 0, 1, 1]
    assert positive.sum() == pytest.approx(4.0)


def test_scores_leave_group_statistics_unchanged(make_trajectory):
    """Test that rescoring steps changes token weights but never rewards or advantages."""
    # Setup
    shapes = [[(2, 1), (3, 0)], [(1, 1), (2, 1)], [(4, 0)], [(2, 2), (1, 0)]]
    rewards = [1.0, 0.5, 0.0, 0.5]
    rng = np.random.default_rng(4)

    def group_with(scores):
        members = [
            make_trajectory(shape, scores=s, reward=r)
            for shape, s, r in zip(shapes, scores, rewards)
        ]
        return build_group("p0", members)

    first = group_with([[0.2, 0.9], [0.5, 0.5], [0.7], [0.1, 0.3]])
    second = group_with([rng.random(len(shape)).tolist() for shape in shapes])

    # Execute
    weights_first = [
        trajectory_token_weights(t, a) for t, a in zip(first.trajectories, first.advantages)
    ]
    weights_second = [
        trajectory_token_weights(t, a) for t, a in zip(second.trajectories, second.advantages)
    ]

    # Verify
    assert second.rewards == first.rewards
    assert second.advantages == pytest.approx(first.advantages, abs=1e-12)
    assert any(not np.allclose(a, b) for a, b in zip(weights_first, weights_second))
    for w1, w2, traj in zip(weights_first, weights_second, first.trajectories):
        assert w1.sum() == pytest.approx(w2.sum())
        assert w1.sum() == pytest.approx(sum(step.n_i for step in traj.steps))
