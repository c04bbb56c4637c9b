"""
Tests for the tabular categorical policy.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from grpo_reshape.core.policy import PolicyParams, grad_norm, slot_of


@pytest.fixture
def params():
    """Policy with one explicit row and lazily sized slots."""
    return PolicyParams(
        logits={"kind|a": [1.0, 0.0, -1.0]},
        slot_sizes={"kind": 3, "loc": 5},
    )


def test_slot_of():
    """Test slot names with and without the hint prefix."""
    assert slot_of("kind|view|ok|0") == "kind"
    assert slot_of("hint|loc|edit|3") == "loc"


def test_rows_are_created_lazily(params):
    """Test that unseen contexts start uniform."""
    assert params.probs("loc|edit|-") == pytest.approx([0.2] * 5)
    assert "loc|edit|-" in params.logits
    with pytest.raises(KeyError):
        params.row("sym|a|0")


def test_probabilities(params):
    """Test softmax, temperature and entropy of one row."""
    probs = params.probs("kind|a")

    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] > probs[1] > probs[2]
    assert params.logp("kind|a", 0) == pytest.approx(np.log(probs[0]))
    assert params.probs("kind|a", temperature=100.0) == pytest.approx([1 / 3] * 3, abs=1e-2)
    assert 0.0 < params.entropy("kind|a") < np.log(3)


def test_rejects_non_finite_rows():
    """Test row validation."""
    with pytest.raises(ValidationError):
        PolicyParams(logits={"kind|a": [np.inf, 0.0]})
    with pytest.raises(ValidationError):
        PolicyParams(logits={"kind|a": []})


def test_snapshot_is_independent(params):
    """Test that a snapshot does not follow later updates."""
    frozen = params.snapshot()

    params.apply_gradient({"kind|a": np.array([1.0, 0.0, 0.0])}, lr=0.5)

    assert params.logits["kind|a"].tolist() == [0.5, 0.0, -1.0]
    assert frozen.logits["kind|a"].tolist() == [1.0, 0.0, -1.0]


def test_apply_gradient_creates_rows(params):
    """Test descending on a row that did not exist yet."""
    params.apply_gradient({"loc|view|2": np.ones(5)}, lr=0.1)

    assert params.logits["loc|view|2"] == pytest.approx([-0.1] * 5)


def test_save_and_load(tmp_path, params):
    """Test that a saved table loads back exactly."""
    path = tmp_path / "params.json"
    params.row("loc|edit|1")

    params.save(path)
    loaded = PolicyParams.load(path)

    assert loaded.to_record() == params.to_record()
    assert loaded.logp("kind|a", 2) == params.logp("kind|a", 2)


def test_grad_norm():
    """Test the Euclidean norm over rows."""
    assert grad_norm(None) == 0.0
    assert grad_norm({"a": np.array([3.0]), "b": np.array([0.0, 4.0])}) == pytest.approx(5.0)
