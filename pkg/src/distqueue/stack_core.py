"""LIFO position assignment with monotone tickets.

Stack batches always carry (pops, pushes).  The anchor serves a pop run from
the top of the occupied range downward, bounding each pop by the current
ticket so it can only take elements pushed in earlier phases; a push run
extends the range upward, pairing every position with a fresh ticket.
Positions are reused over time, tickets never are.  Decomposition hands pop
positions out from the top first and pushes from the bottom, mirroring the
value order."""

from __future__ import annotations

from distqueue import messages as m
from distqueue.batch import Batch, requests_by_run


def assign_stack(node, acc, batch: Batch) -> m.StackBundle:
    """Anchor stage 2 for the stack; batch.ops is (pops, pushes)."""
    pops, pushes = batch.ops
    if pops:
        pop_iv = (max(1, acc.last - pops + 1), acc.last)
        acc.last = max(0, acc.last - pops)
    else:
        pop_iv = (1, 0)
    pop_bound = acc.ticket
    node.recorder.anchor_run_state(acc.phase, 1, 1, acc.last)
    push_iv = (acc.last + 1, acc.last + pushes)
    ticket_start = acc.ticket + 1
    acc.last += pushes
    acc.ticket += pushes
    node.recorder.anchor_run_state(acc.phase, 2, 1, acc.last)
    return m.StackBundle(pop_iv, pop_bound, push_iv, ticket_start)


def decompose_stack(components, bundle: m.StackBundle) -> list[m.StackBundle]:
    """Split a stack bundle across components in memorized order.

    Earlier components' pops take the highest positions (they carry the
    smaller values, and the newest elements must pop first); pushes are
    handed out bottom-up."""
    top = bundle.pop_interval[1]
    floor = bundle.pop_interval[0]
    push_x = bundle.push_interval[0]
    ticket = bundle.push_ticket_start
    shares = []
    for _, batch in components:
        pops, pushes = batch.ops
        if pops:
            sub_pop = (max(floor, top - pops + 1), top)
            top -= pops
        else:
            sub_pop = (floor, floor - 1)
        sub_push = (push_x, push_x + pushes - 1)
        shares.append(m.StackBundle(sub_pop, bundle.pop_bound, sub_push, ticket))
        push_x += pushes
        ticket += pushes
    return shares


def self_assignments_stack(batch: Batch, share: m.StackBundle):
    """(req, is_insert, position, ticket, bound) for the node's own requests.

    Pop offset 1 gets the top position of the share; pops past the floor
    return bottom.  Push offset k gets the k-th position and ticket."""
    out = []
    per_run = requests_by_run(batch)
    x, y = share.pop_interval
    for k, req in enumerate(per_run.get(1, ())):
        pos = y - k
        if pos < x:
            pos = None
        out.append((req, False, pos, None, share.pop_bound))
    px, py = share.push_interval
    for k, req in enumerate(per_run.get(2, ())):
        pos = px + k
        assert pos <= py, "push interval narrower than its run"
        out.append((req, True, pos, share.push_ticket_start + k, None))
    return out
