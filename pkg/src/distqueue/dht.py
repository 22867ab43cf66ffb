"""Consistent-hashing storage of queue/stack elements keyed by hashed positions.

Every position hashes to a point in label space; the cycle node owning that
point stores the element.  A get that outruns its put parks at the owner and
resolves when the put lands.  Under churn a node may receive traffic for
ranges it has handed to a ward or replacement, which it forwards along its
handoff references; traffic that terminated at a stale owner takes single
linear hops toward the current one.
"""

from __future__ import annotations

from dataclasses import dataclass

from distqueue import messages as m
from distqueue.batch import ReqKey
from distqueue.topology import (RouteState, cycle_dist, make_route, owns,
                                position_key, route_next)


def key_of(position: int) -> int:
    return position_key(position)


@dataclass(slots=True)
class ParkedGet:
    position: int
    initiator_uid: int
    requester: ReqKey
    bound: int | None


# -- routing glue -----------------------------------------------------------------

def route_or_handle(node, payload, key: int) -> None:
    """Start routing `payload` toward the owner of `key` from this node."""
    if node.ward_mode:
        # Wards have no cycle edges yet; their responsible node routes.
        node.send(node.responsible,
                  m.Routed(make_route(key, node.ctx.n_processes), payload,
                           data_plane=getattr(payload, "data_plane", False)))
        return
    state = make_route(key, node.ctx.n_processes)
    step = route_next(node, state)
    if step is None:
        handle_terminal(node, payload)
    else:
        ref, st = step
        node.send(ref, m.Routed(st, payload,
                                data_plane=getattr(payload, "data_plane", False)))


def on_routed(node, src_uid: int, msg: m.Routed) -> None:
    if node.ward_mode:
        node.send(node.responsible, msg)
        return
    step = route_next(node, msg.state)
    if step is None:
        handle_terminal(node, msg.inner)
    else:
        ref, st = step
        node.send(ref, m.Routed(st, msg.inner, msg.data_plane))


def on_direct(node, src_uid: int, msg: m.Direct) -> None:
    handle_terminal(node, msg.inner)


def handle_terminal(node, inner) -> None:
    from distqueue import membership

    if isinstance(inner, m.JoinRequest):
        membership.handle_join_at_owner(node, inner.joiner)
    elif isinstance(inner, m.Put):
        handle_put(node, inner)
    elif isinstance(inner, m.Get):
        handle_get(node, inner)
    else:
        raise AssertionError(f"unroutable payload {inner!r}")


def _handoff_target(node, key: int):
    """The handed-off tail covering `key`, if any (closest predecessor wins)."""
    best = None
    best_d = -1
    span = cycle_dist(node.label, key)
    for label, ref in node.handoffs:
        d = cycle_dist(node.label, label)
        if d <= span and d > best_d:
            best, best_d = ref, d
    return best


def _misrouted(node, key: int) -> bool:
    return (not node.ward_mode and node.succ is not None
            and not owns(node.label, node.succ.label, key))


def _forward_linear(node, payload, key: int) -> None:
    # Ownership moved while the message was in flight; one hop toward it.
    fwd = cycle_dist(node.label, key)
    bwd = cycle_dist(key, node.label)
    ref = node.succ if fwd <= bwd else node.pred
    node.send(ref, m.Routed(RouteState(key, ()), payload, data_plane=True))


# -- storage ---------------------------------------------------------------------

def handle_put(node, put: m.Put) -> None:
    target = _handoff_target(node, put.key)
    if target is not None:
        node.send(target, m.Direct(put))
        return
    if _misrouted(node, put.key):
        _forward_linear(node, put, put.key)
        return
    if node.ctx.stack_mode:
        bucket = node.store.setdefault(put.position, {})
        assert put.ticket not in bucket, "push ticket reused at a position"
        bucket[put.ticket] = put.element
    else:
        assert put.position not in node.store, \
            f"position {put.position} stored twice"
        node.store[put.position] = put.element
    node.recorder.request_completed(node.kernel.now, put.requester, put.element)
    if put.origin_uid is not None:
        node.kernel.send(node.uid, put.origin_uid,
                         m.PutStored(put.requester, put.position))
    _resolve_parked(node, put.position)


def handle_get(node, get: m.Get) -> None:
    target = _handoff_target(node, get.key)
    if target is not None:
        node.send(target, m.Direct(get))
        return
    if _misrouted(node, get.key):
        _forward_linear(node, get, get.key)
        return
    element = _take(node, get.position, get.bound)
    if element is _MISSING:
        node.parked.append(ParkedGet(get.position, get.initiator_uid,
                                     get.requester, get.bound))
    else:
        node.kernel.send(node.uid, get.initiator_uid,
                         m.GetReply(get.requester, get.position, element))


_MISSING = object()


def _take(node, position: int, bound: int | None):
    """Remove and return the stored element for one get, if present.

    Queue mode: the unique element at the position.  Stack mode: the element
    with the largest ticket not exceeding the get's bound.
    """
    if node.ctx.stack_mode:
        bucket = node.store.get(position)
        if not bucket:
            return _MISSING
        candidates = [t for t in bucket if t <= bound]
        if not candidates:
            return _MISSING
        element = bucket.pop(max(candidates))
        if not bucket:
            del node.store[position]
        return element
    if position in node.store:
        return node.store.pop(position)
    return _MISSING


def _resolve_parked(node, position: int) -> None:
    still = []
    for p in node.parked:
        if p.position == position:
            element = _take(node, p.position, p.bound)
            if element is not _MISSING:
                node.kernel.send(node.uid, p.initiator_uid,
                                 m.GetReply(p.requester, p.position, element))
                continue
        still.append(p)
    node.parked = still


def resolve_all_parked(node) -> None:
    """Re-check every parked get, e.g. after a data handover arrived."""
    parked, node.parked = node.parked, []
    for p in parked:
        element = _take(node, p.position, p.bound)
        if element is _MISSING:
            node.parked.append(p)
        else:
            node.kernel.send(node.uid, p.initiator_uid,
                             m.GetReply(p.requester, p.position, element))


# -- completions back at the initiator ------------------------------------------------

def on_get_reply(node, src_uid: int, msg: m.GetReply) -> None:
    node.recorder.request_completed(node.kernel.now, msg.requester, msg.element)
    node.outstanding_ops.discard(msg.requester)


def on_put_stored(node, src_uid: int, msg: m.PutStored) -> None:
    node.outstanding_ops.discard(msg.requester)


# -- inventory (audits) ------------------------------------------------------------

def stored_items(node) -> list[tuple]:
    """Flat (position, ticket, element) inventory of this node's slice."""
    out = []
    if node.ctx.stack_mode:
        for pos, bucket in node.store.items():
            for t, e in bucket.items():
                out.append((pos, t, e))
    else:
        for pos, e in node.store.items():
            out.append((pos, None, e))
    return out


def install_items(node, items) -> None:
    for pos, ticket, element in items:
        if node.ctx.stack_mode:
            bucket = node.store.setdefault(pos, {})
            assert ticket not in bucket
            bucket[ticket] = element
        else:
            assert pos not in node.store
            node.store[pos] = element
