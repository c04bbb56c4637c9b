"""
Tests for resource-pool scheduling.
"""
import asyncio

import numpy as np
import pytest

from grpo_reshape.core.scheduler import (
    LivePoolRunner,
    makespan,
    occupancy_peaks,
    rollout_work_items,
    schedule,
    trace_lines,
)
from grpo_reshape.exceptions import UnknownPoolError
from grpo_reshape.models.governance import PoolConfig, WorkItem
from grpo_reshape.models.trajectory import ActionKind


def random_workload(seed, rollouts=8, max_turns=4, max_duration=4):
    """
    Random chained rollout workload.

    Each rollout alternates an inference request with a sandbox or compile
    call; arrivals and durations are integers drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    items = []
    for r in range(rollouts):
        arrival = float(rng.integers(0, 3))
        previous = None
        for turn in range(int(rng.integers(1, max_turns + 1))):
            for pool in ("inference", str(rng.choice(["sandbox", "compile"]))):
                task_id = f"r{r}-t{turn}-{pool}"
                items.append(WorkItem(
                    task_id=task_id,
                    pool=pool,
                    duration=float(rng.integers(1, max_duration + 1)),
                    arrival=arrival,
                    after=previous,
                ))
                previous = task_id
    return items


def starts(trace):
    """Start time of every item."""
    return {e.task_id: e.time for e in trace if e.event == "start"}


def test_compile_cap_queues_third_task():
    """Test three unit compiles against a cap of two."""
    # Setup
    items = [WorkItem(task_id=f"c{i}", pool="compile", duration=1.0) for i in range(3)]

    # Execute
    trace = schedule(items, PoolConfig(compile_cap=2))

    # Verify
    assert starts(trace) == {"c0": 0.0, "c1": 0.0, "c2": 1.0}
    assert occupancy_peaks(trace)["compile"] == 2
    assert makespan(trace) == 2.0


def test_no_queueing_with_large_caps():
    """Test that ample caps give the longest single duration as makespan."""
    items = [
        WorkItem(task_id="i0", pool="inference", duration=2.0),
        WorkItem(task_id="s0", pool="sandbox", duration=5.0),
        WorkItem(task_id="c0", pool="compile", duration=3.0),
        WorkItem(task_id="c1", pool="compile", duration=1.0),
    ]

    trace = schedule(items, PoolConfig(inference_cap=4, sandbox_cap=4, compile_cap=4))

    assert set(starts(trace).values()) == {0.0}
    assert makespan(trace) == 5.0


def test_pools_do_not_block_each_other():
    """Test that a saturated compile queue never delays sandbox work."""
    # Setup
    items = [WorkItem(task_id=f"c{i}", pool="compile", duration=4.0) for i in range(3)]
    items += [
        WorkItem(task_id=f"s{i}", pool="sandbox", duration=1.0, arrival=float(i))
        for i in range(4)
    ]

    # Execute
    trace = schedule(items, PoolConfig(compile_cap=1, sandbox_cap=1))

    # Verify
    started = starts(trace)
    assert [started[f"c{i}"] for i in range(3)] == [0.0, 4.0, 8.0]
    assert [started[f"s{i}"] for i in range(4)] == [0.0, 1.0, 2.0, 3.0]


def test_chained_item_waits_for_release():
    """Test that a tool call starts only after its inference slot is released."""
    # Setup
    items = [
        WorkItem(task_id="gen", pool="inference", duration=2.0),
        WorkItem(task_id="edit", pool="sandbox", duration=1.0, after="gen"),
        WorkItem(task_id="gen2", pool="inference", duration=1.0, after="edit"),
    ]

    # Execute
    trace = schedule(items, PoolConfig(inference_cap=1))

    # Verify
    keys = [(e.event, e.task_id) for e in trace]
    assert keys.index(("finish", "gen")) < keys.index(("start", "edit"))
    assert starts(trace) == {"gen": 0.0, "edit": 2.0, "gen2": 3.0}
    assert makespan(trace) == 4.0


def test_chained_item_respects_its_own_arrival():
    """Test that a child never starts before its arrival time."""
    items = [
        WorkItem(task_id="a", pool="inference", duration=1.0),
        WorkItem(task_id="b", pool="compile", duration=1.0, arrival=5.0, after="a"),
    ]

    trace = schedule(items, PoolConfig())

    assert starts(trace)["b"] == 5.0


def test_unknown_pool_rejected():
    """Test that an unknown pool name is an error."""
    items = [WorkItem(task_id="x", pool="gpu", duration=1.0)]

    with pytest.raises(UnknownPoolError):
        schedule(items, PoolConfig())


def test_bad_chains_rejected():
    """Test duplicate ids and dangling predecessors."""
    dup = [WorkItem(task_id="x", pool="compile", duration=1.0)] * 2
    dangling = [WorkItem(task_id="x", pool="compile", duration=1.0, after="missing")]

    with pytest.raises(ValueError):
        schedule(dup, PoolConfig())
    with pytest.raises(ValueError):
        schedule(dangling, PoolConfig())


def test_cap_safety_random_workloads():
    """Test that replayed occupancy never exceeds any cap."""
    rng = np.random.default_rng(0)
    for seed in range(1000):
        # Setup
        pools = PoolConfig(
            inference_cap=int(rng.integers(1, 4)),
            sandbox_cap=int(rng.integers(1, 4)),
            compile_cap=int(rng.integers(1, 3)),
        )
        items = random_workload(seed)

        # Execute
        trace = schedule(items, pools)

        # Verify
        caps = pools.caps()
        for pool, peak in occupancy_peaks(trace).items():
            assert peak <= caps[pool]
        assert sum(e.event == "start" for e in trace) == len(items)
        assert sum(e.event == "finish" for e in trace) == len(items)
        for event in trace:
            assert 0 <= event.in_flight <= caps[event.pool]


def test_trace_is_deterministic():
    """Test that the same workload yields byte-identical traces."""
    pools = PoolConfig(inference_cap=2, sandbox_cap=1, compile_cap=1)

    first = trace_lines(schedule(random_workload(42), pools))
    second = trace_lines(schedule(random_workload(42), pools))

    assert first == second
    assert first.count("\n") == 2 * len(random_workload(42))


def test_rollout_work_items(make_trajectory):
    """Test translating a settled rollout into chained work."""
    # Setup
    traj = make_trajectory([(1, 1), (1, 1)])
    steps = [
        traj.steps[0].copy(update={"action_kind": ActionKind.VIEW}),
        traj.steps[1].copy(update={"action_kind": ActionKind.COMPILE}),
    ]
    traj = traj.copy(update={"steps": steps})

    # Execute
    items = rollout_work_items([traj])

    # Verify
    assert [(i.task_id, i.pool, i.after) for i in items] == [
        ("0-0-inference", "inference", None),
        ("0-0-sandbox", "sandbox", "0-0-inference"),
        ("0-1-inference", "inference", "0-0-sandbox"),
        ("0-1-compile", "compile", "0-1-inference"),
        ("0-settle", "compile", "0-1-compile"),
    ]
    assert makespan(schedule(items, PoolConfig())) == 1 + 1 + 1 + 3 + 3


@pytest.mark.asyncio
async def test_live_runner_respects_caps():
    """Test that the live runner never exceeds a pool cap."""
    # Setup
    items = [WorkItem(task_id=f"c{i}", pool="compile", duration=1.0) for i in range(5)]
    items += [WorkItem(task_id=f"s{i}", pool="sandbox", duration=1.0) for i in range(3)]
    runner = LivePoolRunner(PoolConfig(compile_cap=2, sandbox_cap=3), time_scale=0.01)

    # Execute
    results = await runner.run(items)

    # Verify
    assert set(results) == {item.task_id for item in items}
    assert runner.peaks["compile"] == 2
    assert runner.peaks["sandbox"] == 3


@pytest.mark.asyncio
async def test_live_runner_follows_chains():
    """Test that chained items run in order with a custom handler."""
    # Setup
    order = []

    async def handler(item):
        order.append(item.task_id)
        await asyncio.sleep(0)
        return item.pool

    items = [
        WorkItem(task_id="edit", pool="sandbox", duration=1.0, after="gen"),
        WorkItem(task_id="gen", pool="inference", duration=1.0),
        WorkItem(task_id="check", pool="compile", duration=1.0, after="edit"),
    ]

    # Execute
    results = await LivePoolRunner(PoolConfig()).run(items, handler)

    # Verify
    assert order == ["gen", "edit", "check"]
    assert results == {"edit": "sandbox", "gen": "inference", "check": "compile"}


@pytest.mark.asyncio
async def test_live_runner_rejects_unknown_pool():
    """Test that the live runner validates pools before starting."""
    with pytest.raises(UnknownPoolError):
        await LivePoolRunner(PoolConfig()).run([WorkItem(task_id="x", pool="gpu", duration=1.0)])
