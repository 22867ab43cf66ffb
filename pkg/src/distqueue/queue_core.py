"""The four-stage request pipeline.

Stage 1 (timeout): once a node holds a sub-batch from every current child and
its own in-flight batch is gone, it folds the buffered sub-batches and its
local buffer into one batch, remembers the component order, and sends the
result to its tree parent; the anchor instead assigns positions locally.
Stage 2 (anchor): each run of the batch maps to an inclusive position
interval, enqueue runs extending the occupied range, dequeue runs consuming
from its front (or from the top, in stack mode).  Stage 3: intervals are
split across the memorized components in order and forwarded; the node's own
requests receive concrete positions, with dequeues beyond the interval
completing immediately with bottom.  Stage 4: positioned requests become DHT
puts and gets.
"""

from __future__ import annotations

from distqueue import dht, membership, stack_core
from distqueue import messages as m
from distqueue.batch import Batch, combine_all, requests_by_run
from distqueue.topology import NodeRef


def try_flush(node) -> None:
    """Stage-1 gate, evaluated on every timeout."""
    from distqueue.node import LeaveMode, Stage

    if node.stage is not Stage.AGGREGATING or node.paused:
        return
    if node.leave_mode not in (LeaveMode.NONE, LeaveMode.ASKING,
                               LeaveMode.POSTPONED):
        return
    if node.ctx.stack_mode and node.ctx.stack_barrier and node.outstanding_ops:
        return
    is_anchor = node.is_anchor()
    parent = None
    if not is_anchor:
        parent = node.parent()
        if parent is None:
            # Topology minimum awaiting the anchor-state migration.
            return
    expected = node.expected_children()
    if any(c.uid not in node.child_batches for c in expected):
        return

    ordered: list[tuple[NodeRef | None, Batch]] = []
    taken: set[int] = set()
    for c in expected:
        ordered.append(node.child_batches.pop(c.uid))
        taken.add(c.uid)
    extras = sorted(node.child_batches.values(), key=lambda rb: rb[0].order_key())
    node.child_batches.clear()
    ordered.extend(extras)

    self_batch, elements = node.buf.flush()
    ordered.append((None, self_batch))
    node.inflight = ordered
    node.inflight_elements = elements
    combined = combine_all([b for _, b in ordered])

    if is_anchor:
        anchor_process(node, combined)
    else:
        node.recorder.batch_sent(len(combined.ops))
        node.send(parent, m.Aggregate(combined, node.ref),
                  idle=combined.is_empty())
        node.stage = Stage.AWAITING


def on_aggregate(node, src_uid: int, msg: m.Aggregate) -> None:
    assert msg.sender.uid not in node.child_batches, \
        f"node {node.uid} got two batches from {msg.sender.uid} in one phase"
    node.child_batches[msg.sender.uid] = (msg.sender, msg.batch)


def anchor_process(node, combined: Batch) -> None:
    """Stages 2-3 at the anchor: value accounting, intervals, local serve."""
    acc = node.anchor
    acc.phase += 1
    node.recorder.anchor_phase(node.kernel.now)
    acc.pending_joins += combined.j
    acc.pending_leaves += combined.l

    prefix = 0
    sums = []
    for op in combined.ops:
        sums.append(prefix)
        prefix += op
    for tag in combined.tags:
        node.recorder.value_assigned(tag.req, acc.counter + sums[tag.run - 1] + tag.offset,
                                     acc.phase, tag.run, tag.offset)
    acc.counter += combined.total()

    flag = (not acc.update_active
            and membership.should_trigger_update(node, acc))
    if node.ctx.stack_mode:
        bundle = stack_core.assign_stack(node, acc, combined)
    else:
        bundle = assign_queue(node, acc, combined)
    origins = serve_components(node, bundle, flag)
    if flag:
        membership.enter_update_phase_at_anchor(node, origins)


def assign_queue(node, acc, batch: Batch) -> m.QueueBundle:
    """Stage 2: map each run to an interval of the occupied position range."""
    intervals = []
    for i, op in enumerate(batch.ops, start=1):
        if i % 2 == 1:
            x, y = acc.last + 1, acc.last + op
            acc.last += op
        else:
            x = acc.first
            y = min(acc.first + op - 1, acc.last)
            acc.first = min(acc.first + op, acc.last + 1)
        assert acc.first <= acc.last + 1
        intervals.append((x, y))
        node.recorder.anchor_run_state(acc.phase, i, acc.first, acc.last)
    return m.QueueBundle(tuple(intervals))


def serve_components(node, bundle, flag: bool) -> list[int]:
    """Stage 3: split the bundle over the memorized components, in order.

    Child components are forwarded their share via Serve; the node's own
    component turns into per-request position assignments and stage-4
    emission.  Returns the child origin uids (the old-tree children for the
    update phase)."""
    components = node.inflight
    assert components is not None
    origins: list[int] = []
    if isinstance(bundle, m.StackBundle):
        shares = stack_core.decompose_stack(components, bundle)
    else:
        shares = decompose_queue(components, bundle)
    for (origin, batch), share in zip(components, shares):
        if origin is None:
            if isinstance(bundle, m.StackBundle):
                assignments = stack_core.self_assignments_stack(batch, share)
            else:
                assignments = self_assignments_queue(batch, share)
            emit(node, assignments)
        else:
            origins.append(origin.uid)
            node.send(origin, m.Serve(share, flag),
                      idle=batch.is_empty() and not flag)
    node.inflight = None
    node.inflight_elements = {}
    return origins


def decompose_queue(components, bundle: m.QueueBundle) -> list[m.QueueBundle]:
    """Split per-run intervals across components; enqueue runs take exactly
    their count, dequeue runs at most their count."""
    xs = [x for x, _ in bundle.intervals]
    shares = []
    for _, batch in components:
        subs = []
        for i, op in enumerate(batch.ops, start=1):
            x = xs[i - 1]
            y = bundle.intervals[i - 1][1]
            if i % 2 == 1:
                sub = (x, x + op - 1)
                xs[i - 1] = x + op
            else:
                sub = (x, min(x + op - 1, y))
                xs[i - 1] = min(x + op, y + 1)
            subs.append(sub)
        shares.append(m.QueueBundle(tuple(subs)))
    return shares


def self_assignments_queue(batch: Batch, share: m.QueueBundle):
    """Positions for the node's own requests, in local issue order per run."""
    out = []
    per_run = requests_by_run(batch)
    for i, (x, y) in enumerate(share.intervals, start=1):
        reqs = per_run.get(i, ())
        is_enq = i % 2 == 1
        for k, req in enumerate(reqs):
            pos = x + k
            if not is_enq and pos > y:
                pos = None
            elif is_enq:
                assert pos <= y, "enqueue interval narrower than its run"
            out.append((req, is_enq, pos, None, None))
    return out


def emit(node, assignments) -> None:
    """Stage 4: turn positioned requests into DHT traffic.

    Dequeues that received no position complete locally with bottom.
    assignments entries: (req, is_insert, position, ticket, bound).
    """
    now = node.kernel.now
    barrier = node.ctx.stack_mode and node.ctx.stack_barrier
    for req, is_insert, pos, ticket, bound in assignments:
        node.recorder.position_assigned(req, pos, ticket=ticket, bound=bound)
        if pos is None:
            node.recorder.request_completed(now, req, None)
            continue
        if is_insert:
            element = node.inflight_elements[req]
            payload = m.Put(pos, dht.key_of(pos), element, req, ticket=ticket,
                            origin_uid=node.uid if barrier else None)
            if barrier:
                node.outstanding_ops.add(req)
        else:
            payload = m.Get(pos, dht.key_of(pos), node.uid, req, bound=bound)
            # Replies are always awaited; the leave gate drains them.
            node.outstanding_ops.add(req)
        dht.route_or_handle(node, payload, payload.key)


def on_serve(node, src_uid: int, msg: m.Serve) -> None:
    """Stage-3 receipt: decompose our sub-batch's intervals and recurse."""
    from distqueue.node import Stage

    assert node.stage is Stage.AWAITING, \
        f"unexpected Serve at node {node.uid}"
    if msg.update_flag:
        origins = [origin.uid for origin, _ in node.inflight if origin is not None]
        membership.begin_update_phase(node, src_uid, origins)
    serve_components(node, msg.bundle, msg.update_flag)
    node.stage = Stage.AGGREGATING
