"""
Tests for token KL, reward shaping and batch expansion.
"""
import math

import numpy as np
import pytest

from grpo_reshape.core.distill import (
    branch_distributions,
    expand_batch,
    expand_group,
    masked_kl,
    shape_reward_opsd,
    shape_reward_pidistill,
    shaped_group,
    token_kl,
)
from grpo_reshape.core.grpo import build_group, grpo_loss
from grpo_reshape.core.policy import PolicyParams
from grpo_reshape.exceptions import DistributionError, MalformedTrajectoryError
from grpo_reshape.models.distill import DistillMode, KlConfig
from grpo_reshape.models.grpo import ClipConfig

TEACHER = [0.75, 0.25]
STUDENT = [0.5, 0.5]
PAIR_KL = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)


def hinted(traj, hint_visible=True):
    """Record the hinted branch on every assistant token of a trajectory."""
    tokens = []
    for token in traj.tokens:
        if token.role_flag:
            token = token.copy(update={
                "alt_context": "hint|" + token.context,
                "logp_current": -1.2,
                "logp_old": -0.4,
                "logp_teacher": -0.4,
                "logp_ref": -1.1,
                "logp_ref_teacher": -0.5,
            })
        tokens.append(token)
    return traj.copy(update={"tokens": tokens, "hint_visible": hint_visible})


@pytest.fixture
def branch_params():
    """A student row and a sharper hinted row over three tokens."""
    return PolicyParams(
        logits={"kind|x": np.zeros(3), "hint|kind|x": np.array([2.0, 0.0, -1.0])},
        slot_sizes={"kind": 3},
    )


def test_token_kl_examples():
    """Test identical inputs and the two-token example."""
    assert token_kl([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0
    assert token_kl(TEACHER, STUDENT) == pytest.approx(0.130812, abs=1e-6)
    assert token_kl(TEACHER, STUDENT, "student_to_teacher") == pytest.approx(
        0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
    )


def test_token_kl_topk():
    """Test lossless and lossy truncation."""
    p, q = [0.5, 0.3, 0.2], [0.2, 0.3, 0.5]
    exact = token_kl(p, q)

    assert token_kl(p, q, topk=3) == exact
    assert token_kl(p, q, topk=10) == exact
    truncated = token_kl(p, q, topk=1)
    assert truncated == pytest.approx(0.5 * math.log(0.5 / 0.2) + 0.5 * math.log(0.5 / 0.8))
    assert 0.0 <= truncated <= exact


def test_token_kl_rejects_bad_inputs():
    """Test normalisation and shape checks."""
    with pytest.raises(DistributionError):
        token_kl([0.5, 0.6], STUDENT)
    with pytest.raises(DistributionError):
        token_kl([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        token_kl(TEACHER, STUDENT, "sideways")


def test_token_kl_nonnegative_random():
    """Test non-negativity on random distributions."""
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        assert token_kl(p, q) >= 0.0
        assert token_kl(p, q, topk=int(rng.integers(1, 6))) >= 0.0


def test_masked_kl_aggregations(make_trajectory):
    """Test masked sum, masked mean and the per-token vector."""
    # Setup
    traj = make_trajectory([(2, 1)])
    pairs = [(TEACHER, STUDENT), (TEACHER, STUDENT), None]

    # Execute
    total = masked_kl(traj, KlConfig(direction="teacher_to_student"), pairs)
    mean = masked_kl(traj, KlConfig(direction="teacher_to_student", aggregation="masked_mean"), pairs)
    vector = masked_kl(
        traj, KlConfig(direction="teacher_to_student", aggregation="per_token_in_advantage"), pairs
    )

    # Verify
    assert total == pytest.approx(0.261624, abs=1e-6)
    assert mean == pytest.approx(0.130812, abs=1e-6)
    assert vector == pytest.approx([PAIR_KL, PAIR_KL, 0.0])


def test_masked_kl_all_echo(make_trajectory):
    """Test that an all-echo trajectory carries no KL."""
    traj = make_trajectory([(0, 3)])

    assert masked_kl(traj, KlConfig(), [None, None, None]) == 0.0
    assert masked_kl(traj, KlConfig(aggregation="masked_mean"), [None, None, None]) == 0.0


def test_masked_kl_length_coupling(make_trajectory):
    """Test that doubling active tokens doubles the sum but not the mean."""
    short = make_trajectory([(2, 0)])
    long = make_trajectory([(4, 0)])
    cfg_sum = KlConfig(direction="teacher_to_student")
    cfg_mean = KlConfig(direction="teacher_to_student", aggregation="masked_mean")

    assert masked_kl(long, cfg_sum, [(TEACHER, STUDENT)] * 4) == pytest.approx(
        2 * masked_kl(short, cfg_sum, [(TEACHER, STUDENT)] * 2)
    )
    assert masked_kl(long, cfg_mean, [(TEACHER, STUDENT)] * 4) == pytest.approx(
        masked_kl(short, cfg_mean, [(TEACHER, STUDENT)] * 2)
    )


def test_masked_kl_follows_routing(make_trajectory):
    """Test that routed-out tokens contribute no KL."""
    traj = make_trajectory([(2, 0)], loss_mask_override=[0, 1])

    assert masked_kl(traj, KlConfig(direction="teacher_to_student"), [(TEACHER, STUDENT)] * 2) == (
        pytest.approx(PAIR_KL)
    )


def test_shape_rewards():
    """Test the shaping examples."""
    assert shape_reward_opsd(1.0, 10.0, 0.02) == pytest.approx(0.8)
    assert shape_reward_opsd(0.5, 3.0, 0.0) == 0.5
    assert shape_reward_opsd(0.5, 0.0, 0.02) == 0.5
    assert shape_reward_pidistill(0.5, 5.0, 0.01) == pytest.approx(0.45)
    assert shape_reward_pidistill(0.0, 2.0, 0.01) < 0.0
    with pytest.raises(ValueError):
        shape_reward_opsd(1.0, 1.0, -0.1)


def test_branch_distributions(make_trajectory, branch_params):
    """Test that both branches are read on assistant tokens only."""
    traj = hinted(make_trajectory([(1, 1)]))

    pairs = branch_distributions(traj, branch_params)

    assert pairs[1] is None
    p_teacher, p_student = pairs[0]
    assert p_student == pytest.approx([1 / 3] * 3)
    assert p_teacher == pytest.approx(branch_params.probs("hint|kind|x"))


def test_branch_distributions_needs_both_keys(make_trajectory, branch_params):
    """Test that a token without its hinted key is rejected."""
    with pytest.raises(MalformedTrajectoryError):
        branch_distributions(make_trajectory([(1, 0)]), branch_params)


@pytest.mark.parametrize("alpha,weights", [(0.5, (1.0, 1.0)), (1.0, (0.0, 2.0)), (0.25, (1.5, 0.5))])
def test_expand_batch_weights(make_trajectory, alpha, weights):
    """Test copy weights 2(1 - alpha) and 2 alpha."""
    traj = hinted(make_trajectory([(2, 1)], reward=1.0))

    student, teacher = expand_batch(traj, DistillMode(mode="pi_distill", alpha=alpha))

    assert (student.copy_weight, teacher.copy_weight) == pytest.approx(weights)


def test_expand_batch_ratio_sources(make_trajectory):
    """Test which log-probabilities each copy's ratio reads."""
    # Setup
    traj = hinted(make_trajectory([(1, 1)], reward=1.0))

    # Execute
    student, teacher = expand_batch(traj, DistillMode(mode="pi_distill"))

    # Verify
    s, t = student.tokens[0], teacher.tokens[0]
    assert (s.context, s.logp_current, s.logp_old, s.logp_ref) == ("kind|x", -1.2, -0.4, -1.1)
    assert (t.context, t.logp_current, t.logp_old, t.logp_ref) == ("hint|kind|x", -0.4, -0.4, -0.5)
    assert teacher.tokens[1] == traj.tokens[1]
    assert student.reward == teacher.reward == 1.0


def test_expand_batch_needs_hint_sample(make_trajectory):
    """Test that only hint-sampled trajectories expand."""
    student_sample = hinted(make_trajectory([(1, 0)]), hint_visible=False)

    with pytest.raises(MalformedTrajectoryError):
        expand_batch(student_sample, DistillMode(mode="pi_distill"))


def test_expand_group_shares_advantages(make_trajectory):
    """Test that both copies of a member carry its advantage."""
    members = [hinted(make_trajectory([(1, 1)], reward=r)) for r in (1.0, 0.0, 0.5)]
    group = build_group("p0", members)

    expanded = expand_group(group, DistillMode(mode="pi_distill"))

    assert expanded.expanded and expanded.k == 3
    assert len(expanded.trajectories) == 6
    assert expanded.advantages == group.advantages * 2
    assert expanded.rewards == group.rewards * 2


def test_shaped_group_opsd(make_trajectory, branch_params):
    """Test OPSD shaping of student samples."""
    # Setup
    members = [hinted(make_trajectory([(2, 1)], reward=r), hint_visible=False) for r in (1.0, 0.5)]
    cfg = KlConfig(beta=0.1)
    expected_kl = 2 * token_kl(
        branch_params.probs("hint|kind|x"), branch_params.probs("kind|x"), "student_to_teacher"
    )

    # Execute
    group = shaped_group("p0", members, branch_params, cfg, DistillMode(mode="opsd"))

    # Verify
    assert not group.expanded
    assert group.rewards == pytest.approx([1.0 - 0.1 * expected_kl, 0.5 - 0.1 * expected_kl])
    assert group.advantages == pytest.approx([1.0, -1.0])
    assert [t.reward for t in group.trajectories] == [1.0, 0.5]


def test_shaped_group_per_token(make_trajectory, branch_params):
    """Test that the per-token aggregation leaves rewards alone."""
    members = [hinted(make_trajectory([(2, 1)], reward=r), hint_visible=False) for r in (1.0, 0.0)]
    cfg = KlConfig(aggregation="per_token_in_advantage")

    group = shaped_group("p0", members, branch_params, cfg, DistillMode(mode="opsd"))

    assert group.rewards == [1.0, 0.0]
    assert all(t.token_kl[2] == 0.0 and t.token_kl[0] > 0.0 for t in group.trajectories)


def test_shaped_group_pidistill_expands(make_trajectory, branch_params):
    """Test that pi-Distill groups are shaped and expanded."""
    members = [hinted(make_trajectory([(1, 1)], reward=r)) for r in (1.0, 0.0)]
    cfg = KlConfig(direction="teacher_to_student", beta=0.02)

    group = shaped_group("p0", members, branch_params, cfg, DistillMode(mode="pi_distill"))

    assert group.expanded
    assert len(group.trajectories) == 4
    assert group.trajectories[2].tokens[0].context == "hint|kind|x"


def test_teacher_enters_loss_as_constant(make_trajectory, branch_params):
    """Test that OPSD shaping adds no gradient on the hinted rows."""
    # Setup
    members = []
    for r in (1.0, 0.0):
        traj = hinted(make_trajectory([(2, 1)], reward=r), hint_visible=False)
        tokens = [
            t.copy(update={"logp_old": branch_params.logp("kind|x", 0)}) if t.role_flag else t
            for t in traj.tokens
        ]
        members.append(traj.copy(update={"tokens": tokens}))
    group = shaped_group("p0", members, branch_params, KlConfig(beta=0.5), DistillMode(mode="opsd"))

    # Execute
    result = grpo_loss([group], ClipConfig(), branch_params.snapshot())

    # Verify
    assert "kind|x" in result.grad
    assert "hint|kind|x" not in result.grad
