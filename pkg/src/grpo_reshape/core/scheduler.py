"""
Resource-pool scheduling of rollout work.

``schedule`` is a deterministic discrete-event simulator: each pool admits at
most its cap of in-flight items, pools never block one another, and an item
chained ``after`` another starts only once its predecessor has finished and
released its slot. ``LivePoolRunner`` applies the same caps to real
coroutines with counting semaphores.
"""
import asyncio
import heapq
import logging
from collections import deque
from typing import Any, Awaitable, Callable, Deque, Dict, List, Optional, Sequence

from ..exceptions import UnknownPoolError
from ..models.governance import PoolConfig, TraceEvent, WorkItem
from ..models.trajectory import ActionKind, Trajectory

logger = logging.getLogger(__name__)

POOLS = ("inference", "sandbox", "compile")

# Abstract durations used when rollouts are replayed through the simulator
TOOL_DURATIONS = {
    "sandbox": 1.0,
    "compile": 3.0,
}
TOOL_POOLS = {
    ActionKind.VIEW: "sandbox",
    ActionKind.EDIT: "sandbox",
    ActionKind.COMPILE: "compile",
}


def _check_items(items: Sequence[WorkItem], caps: Dict[str, int]) -> None:
    ids = set()
    for item in items:
        if item.pool not in caps:
            raise UnknownPoolError(f"work item {item.task_id!r} names unknown pool {item.pool!r}")
        if item.task_id in ids:
            raise ValueError(f"duplicate work item id {item.task_id!r}")
        ids.add(item.task_id)
    for item in items:
        if item.after is not None and item.after not in ids:
            raise ValueError(f"work item {item.task_id!r} waits on unknown item {item.after!r}")


def schedule(items: Sequence[WorkItem], pools: PoolConfig) -> List[TraceEvent]:
    """
    Simulate capped execution of resource-typed work items.

    Items become ready at their arrival time (or when their predecessor
    finishes, whichever is later) and queue FIFO per pool, ties broken by
    input order. At each instant finishes are processed before starts.

    Args:
        items: Work items
        pools: Pool caps

    Returns:
        Ordered start/finish trace

    Raises:
        UnknownPoolError: If an item names a pool that has no cap
    """
    caps = pools.caps()
    _check_items(items, caps)
    order = {item.task_id: i for i, item in enumerate(items)}
    children: Dict[str, List[WorkItem]] = {}
    pending: List = []
    for item in items:
        if item.after is None:
            heapq.heappush(pending, (item.arrival, order[item.task_id], item))
        else:
            children.setdefault(item.after, []).append(item)

    queues: Dict[str, Deque[WorkItem]] = {pool: deque() for pool in caps}
    in_flight = {pool: 0 for pool in caps}
    running: List = []
    trace: List[TraceEvent] = []
    t = 0.0

    while pending or running or any(queues.values()):
        while running and running[0][0] <= t:
            _, _, item = heapq.heappop(running)
            in_flight[item.pool] -= 1
            trace.append(TraceEvent.construct(time=t, event="finish", task_id=item.task_id,
                                              pool=item.pool, in_flight=in_flight[item.pool]))
            for child in children.get(item.task_id, []):
                heapq.heappush(pending, (max(t, child.arrival), order[child.task_id], child))
        while pending and pending[0][0] <= t:
            _, _, item = heapq.heappop(pending)
            queues[item.pool].append(item)
        for pool in caps:
            queue = queues[pool]
            while queue and in_flight[pool] < caps[pool]:
                item = queue.popleft()
                in_flight[pool] += 1
                trace.append(TraceEvent.construct(time=t, event="start", task_id=item.task_id,
                                                  pool=pool, in_flight=in_flight[pool]))
                heapq.heappush(running, (t + item.duration, order[item.task_id], item))
        upcoming = [h[0][0] for h in (running, pending) if h]
        if not upcoming:
            break
        t = min(upcoming)

    return trace


def occupancy_peaks(trace: Sequence[TraceEvent]) -> Dict[str, int]:
    """
    Replay a trace and return the peak in-flight count per pool.

    The replay recounts occupancy from the start/finish events themselves
    rather than trusting the recorded ``in_flight`` values.
    """
    current: Dict[str, int] = {}
    peaks: Dict[str, int] = {}
    for event in trace:
        delta = 1 if event.event == "start" else -1
        current[event.pool] = current.get(event.pool, 0) + delta
        peaks[event.pool] = max(peaks.get(event.pool, 0), current[event.pool])
    return peaks


def makespan(trace: Sequence[TraceEvent]) -> float:
    """Time of the last finish."""
    return max((e.time for e in trace if e.event == "finish"), default=0.0)


def trace_lines(trace: Sequence[TraceEvent]) -> str:
    """Serialise a trace, one sorted-key JSON object per line."""
    return "".join(event.to_line() + "\n" for event in trace)


def rollout_work_items(trajectories: Sequence[Trajectory]) -> List[WorkItem]:
    """
    Translate settled rollouts into chained work items.

    Every assistant turn is one inference request (one time unit per
    generated token); view/edit use the sandbox pool and compile uses the
    compile pool. A rollout whose settlement ran a final surface check gets
    one more compile item at the end.
    """
    items: List[WorkItem] = []
    for r, traj in enumerate(trajectories):
        previous: Optional[str] = None
        for i, step in enumerate(traj.steps):
            task_id = f"{r}-{i}-inference"
            items.append(WorkItem.construct(task_id=task_id, pool="inference", arrival=0.0,
                                            duration=float(max(1, step.n_i)), after=previous))
            previous = task_id
            pool = TOOL_POOLS.get(step.action_kind)
            if pool is not None:
                task_id = f"{r}-{i}-{pool}"
                items.append(WorkItem.construct(task_id=task_id, pool=pool, arrival=0.0,
                                                duration=TOOL_DURATIONS[pool], after=previous))
                previous = task_id
        if traj.compile_ok is not None:
            items.append(WorkItem.construct(task_id=f"{r}-settle", pool="compile", arrival=0.0,
                                            duration=TOOL_DURATIONS["compile"], after=previous))
    return items


class LivePoolRunner:
    """
    Runs work items as coroutines under per-pool counting semaphores.

    Args:
        pools: Pool caps shared with the simulator
        time_scale: Seconds slept per abstract time unit by the default handler
    """

    def __init__(self, pools: PoolConfig, time_scale: float = 0.0):
        self.caps = pools.caps()
        self.time_scale = time_scale
        self.peaks = {pool: 0 for pool in self.caps}
        self._in_flight = {pool: 0 for pool in self.caps}

    async def _sleep(self, item: WorkItem) -> None:
        await asyncio.sleep(item.duration * self.time_scale)

    async def run(
        self,
        items: Sequence[WorkItem],
        handler: Optional[Callable[[WorkItem], Awaitable[Any]]] = None,
    ) -> Dict[str, Any]:
        """
        Execute every item, honouring caps and ``after`` chains.

        Args:
            items: Work items
            handler: Coroutine run while the item holds its slot

        Returns:
            Handler result per task id
        """
        _check_items(items, self.caps)
        handler = handler or self._sleep
        semaphores = {pool: asyncio.Semaphore(cap) for pool, cap in self.caps.items()}
        finished = {item.task_id: asyncio.Event() for item in items}

        async def worker(item: WorkItem) -> Any:
            if item.after is not None:
                await finished[item.after].wait()
            async with semaphores[item.pool]:
                self._in_flight[item.pool] += 1
                self.peaks[item.pool] = max(self.peaks[item.pool], self._in_flight[item.pool])
                try:
                    return await handler(item)
                finally:
                    self._in_flight[item.pool] -= 1
                    finished[item.task_id].set()

        results = await asyncio.gather(*(worker(item) for item in items))
        logger.debug("live run finished with peaks %s", self.peaks)
        return {item.task_id: result for item, result in zip(items, results)}
