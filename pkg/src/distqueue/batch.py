"""Run-length batches of buffered requests and their combination algebra.

A queue batch is a sequence (op_1, ..., op_k) where odd 1-based indices count
consecutive enqueues and even indices count consecutive dequeues; the empty
batch is (0).  Stack batches are always the pair (pops, pushes).  Batches
additionally carry join/leave counters and, for the consistency checker, a
tag per buffered request remembering which run it belongs to and its offset
within that run.  Combining batches adds runs pointwise and shifts the second
operand's offsets by the first operand's run lengths, which is exactly the
value-assignment rule the checker replays at the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

ReqKey = tuple[int, int]  # (process_id, per-process op index)


@dataclass(frozen=True, slots=True)
class Tag:
    req: ReqKey
    run: int      # 1-based index into ops
    offset: int   # 1-based position within the run


@dataclass(frozen=True, slots=True)
class Batch:
    ops: tuple[int, ...] = (0,)
    j: int = 0
    l: int = 0
    tags: tuple[Tag, ...] = ()
    stack: bool = False

    def is_empty(self) -> bool:
        return not any(self.ops) and self.j == 0 and self.l == 0

    def total(self) -> int:
        return sum(self.ops)


EMPTY = Batch()
EMPTY_STACK = Batch(ops=(0, 0), stack=True)


def record(batch: Batch, is_enqueue: bool, req: ReqKey) -> Batch:
    """Append one queue request to a batch, preserving local issue order.

    Enqueues extend the trailing odd-index run (or open one), dequeues the
    trailing even-index run.  A batch that starts with a dequeue keeps the
    zero-length leading enqueue run, e.g. (0, d, ...).
    """
    assert not batch.stack
    ops = list(batch.ops)
    tail_is_enq = len(ops) % 2 == 1
    if tail_is_enq == is_enqueue:
        ops[-1] += 1
    else:
        ops.append(1)
    tag = Tag(req, len(ops), ops[-1])
    return Batch(tuple(ops), batch.j, batch.l, batch.tags + (tag,), False)


def combine(a: Batch, b: Batch) -> Batch:
    """Pointwise sum of two batches; `b` is the second operand.

    The second operand's request tags are shifted by the first operand's run
    lengths so every tag keeps naming its request's position inside the
    combined run.
    """
    assert a.stack == b.stack
    k = max(len(a.ops), len(b.ops))
    a_ops = a.ops + (0,) * (k - len(a.ops))
    b_ops = b.ops + (0,) * (k - len(b.ops))
    ops = tuple(x + y for x, y in zip(a_ops, b_ops))
    shifted = tuple(Tag(t.req, t.run, t.offset + a_ops[t.run - 1]) for t in b.tags)
    return Batch(ops, a.j + b.j, a.l + b.l, a.tags + shifted, a.stack)


def combine_all(batches: Iterable[Batch]) -> Batch:
    """Left fold of `combine`; ops and counters are associative."""
    out = None
    for b in batches:
        out = b if out is None else combine(out, b)
    assert out is not None
    return out


def requests_by_run(batch: Batch) -> dict[int, list[ReqKey]]:
    """Requests of each run in offset order; used when handing out positions."""
    runs: dict[int, list[tuple[int, ReqKey]]] = {}
    for t in batch.tags:
        runs.setdefault(t.run, []).append((t.offset, t.req))
    return {run: [req for _, req in sorted(pairs)] for run, pairs in runs.items()}


@dataclass
class SelfBuffer:
    """Mutable per-node buffer behind the batch being filled between flushes.

    Queue mode simply records requests.  Stack mode performs local combining:
    a pop is matched with the newest locally pending push, both complete
    immediately and never enter a batch; the residual therefore always has
    the shape (pops, pushes) with every residual pop issued before every
    residual push.
    """

    stack: bool = False
    batch: Batch = field(default_factory=lambda: EMPTY)
    elements: dict[ReqKey, object] = field(default_factory=dict)
    pending_pushes: list[tuple[ReqKey, object]] = field(default_factory=list)
    pop_reqs: list[ReqKey] = field(default_factory=list)

    def __post_init__(self):
        if self.stack:
            self.batch = EMPTY_STACK

    def record_queue(self, is_enqueue: bool, req: ReqKey, element=None) -> None:
        assert not self.stack
        self.batch = record(self.batch, is_enqueue, req)
        if is_enqueue:
            self.elements[req] = element

    def record_push(self, req: ReqKey, element) -> None:
        assert self.stack
        self.pending_pushes.append((req, element))

    def record_pop(self, req: ReqKey) -> tuple[ReqKey, object] | None:
        """Returns the locally matched push, or None if the pop must batch."""
        assert self.stack
        if self.pending_pushes:
            return self.pending_pushes.pop()
        self.pop_reqs.append(req)
        return None

    def _snapshot_stack(self) -> Batch:
        tags = [Tag(req, 1, i + 1) for i, req in enumerate(self.pop_reqs)]
        for i, (req, element) in enumerate(self.pending_pushes):
            tags.append(Tag(req, 2, i + 1))
            self.elements[req] = element
        return Batch((len(self.pop_reqs), len(self.pending_pushes)),
                     self.batch.j, self.batch.l, tuple(tags), True)

    def flush(self) -> tuple[Batch, dict[ReqKey, object]]:
        """Move buffered content out, resetting the buffer."""
        batch = self._snapshot_stack() if self.stack else self.batch
        elements = self.elements
        self.batch = EMPTY_STACK if self.stack else EMPTY
        self.elements = {}
        self.pending_pushes = []
        self.pop_reqs = []
        return batch, elements

    def bump_join(self) -> None:
        b = self.batch
        self.batch = Batch(b.ops, b.j + 1, b.l, b.tags, b.stack)

    def bump_leave(self) -> None:
        b = self.batch
        self.batch = Batch(b.ops, b.j, b.l + 1, b.tags, b.stack)

    def has_content(self) -> bool:
        return (not self.batch.is_empty() or bool(self.pending_pushes)
                or bool(self.pop_reqs))
