"""Lazy join/leave handling and the update phase.

Joins route to the label predecessor of the joining node, which becomes
responsible for it: it hands over the ward's key interval, relays its
batches as an extra aggregation-tree child and counts it in the batch join
counter.  Leaves first obtain permission from the predecessor (lower process
id goes first between adjacent leavers), then clone their entire state into
a replacement node spawned by the predecessor's process, drain their
channels by acknowledgment counting, and depart.  Once the anchor has seen
enough pending joins/leaves it flags the next interval broadcast; during the
resulting update phase wards are chained into the cycle, replacements are
dissolved into their predecessors, acknowledgments climb the old tree, and
the phase ends with a broadcast down the new tree, relocating the anchor
state if the minimum label moved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from distqueue import dht
from distqueue import messages as m
from distqueue.topology import Kind, NodeRef, cycle_dist

LEAVE_RETRY_STEPS = 4


@dataclass(slots=True)
class ReplacementEntry:
    ref: NodeRef
    holds_anchor: bool
    ready: bool = False
    dissolved: bool = False


# -- join ---------------------------------------------------------------------------

def handle_join_at_owner(node, joiner: NodeRef) -> None:
    """The cycle owner of the joiner's label adopts it as a ward."""
    assert not node.ward_mode, "join routed to an un-integrated ward"
    if any(w.uid == joiner.uid for w in node.wards):
        return  # duplicate join (retry); already responsible
    d_new = cycle_dist(node.label, joiner.label)
    closer = None
    closer_d = -1
    for w in node.wards:
        d = cycle_dist(node.label, w.label)
        if d <= d_new and d > closer_d:
            closer, closer_d = w, d
    node.wards.append(joiner)
    node.wards.sort(key=lambda w: cycle_dist(node.label, w.label))
    node.buf.bump_join()
    if closer is None:
        items, parked = _extract_tail(node, joiner.label)
        node.handoffs.append((joiner.label, joiner))
        node.send(joiner, m.Adopt(node.ref, tuple(items), tuple(parked),
                                  paused=node.paused))
    else:
        # A ward already sits between us and the joiner; it holds the data.
        node.send(joiner, m.Adopt(node.ref, (), (), paused=node.paused))
        node.send(closer, m.WardDataTransfer(joiner))


def _extract_tail(node, from_label: int):
    """Remove and return the stored tail [from_label, ...) of this node."""
    cut = cycle_dist(node.label, from_label)
    items = []
    for pos, ticket, element in dht.stored_items(node):
        if cycle_dist(node.label, dht.key_of(pos)) >= cut:
            items.append((pos, ticket, element))
    for pos, ticket, _ in items:
        if node.ctx.stack_mode:
            bucket = node.store[pos]
            del bucket[ticket]
            if not bucket:
                del node.store[pos]
        else:
            del node.store[pos]
    parked = [p for p in node.parked
              if cycle_dist(node.label, dht.key_of(p.position)) >= cut]
    node.parked = [p for p in node.parked if p not in parked]
    return items, parked


def on_join_request(node, src_uid: int, msg: m.JoinRequest) -> None:
    handle_join_at_owner(node, msg.joiner)


def on_adopt(node, src_uid: int, msg: m.Adopt) -> None:
    node.responsible = msg.responsible
    dht.install_items(node, msg.items)
    node.parked.extend(msg.parked)
    node.paused = msg.paused
    dht.resolve_all_parked(node)


def on_ward_data_transfer(node, src_uid: int, msg: m.WardDataTransfer) -> None:
    items, parked = _extract_tail(node, msg.new_ward.label)
    node.handoffs.append((msg.new_ward.label, msg.new_ward))
    node.send(msg.new_ward, m.DataHandover(tuple(items), tuple(parked)))


def on_data_handover(node, src_uid: int, msg: m.DataHandover) -> None:
    dht.install_items(node, msg.items)
    node.parked.extend(msg.parked)
    dht.resolve_all_parked(node)


def on_responsible_changed(node, src_uid: int, msg: m.ResponsibleChanged) -> None:
    if node.ward_mode:
        node.responsible = msg.new
    else:
        node.responsible_ref = msg.new


# -- update phase ----------------------------------------------------------------------

def should_trigger_update(node, acc) -> bool:
    pending = acc.pending_joins + acc.pending_leaves
    if pending <= 0:
        return False
    threshold = max(1, math.ceil(node.ctx.update_alpha * node.sim.live_node_count()))
    return pending >= threshold


def enter_update_phase_at_anchor(node, origins: list[int]) -> None:
    node.anchor.update_active = True
    node.recorder.update_phase_started(node.kernel.now, node.process_id)
    begin_update_phase(node, None, origins)


def begin_update_phase(node, p_old_uid: int | None, origins: list[int]) -> None:
    """Store the old tree links, pause batching, integrate wards."""
    node.paused = True
    node.p_old = p_old_uid
    node.c_old = set(origins)
    node.c_old_acked = set()
    node.update_acked = False
    _integrate_wards(node)


def _integrate_wards(node) -> None:
    wards = node.wards
    if not wards:
        return
    node.wards = []
    for i, w in enumerate(wards):
        pred_ref = node.ref if i == 0 else wards[i - 1]
        succ_ref = wards[i + 1] if i + 1 < len(wards) else node.succ
        mid = node.send(w, m.IntegrateNeighbors(pred_ref, succ_ref))
        node.pending_intros.add(mid)
    mid = node.send(node.succ, m.RepointPred(wards[-1], node.uid))
    node.pending_intros.add(mid)
    node.succ = wards[0]


def on_integrate_neighbors(node, src_uid: int, msg: m.IntegrateNeighbors) -> None:
    node.pred = msg.pred
    node.succ = msg.succ
    node.ward_mode = False
    node.responsible = None
    node.sim.note_integrated(node)


def on_update_ack(node, src_uid: int, msg: m.UpdateAck) -> None:
    node.c_old_acked.add(msg.sender_uid)


def update_phase_tick(node) -> None:
    """Ack gate, evaluated every timeout while the update phase runs."""
    is_active_anchor = node.is_anchor() and node.anchor.update_active
    if node.p_old is None and not is_active_anchor:
        return
    if node.update_acked:
        return
    if node.pending_intros:
        return
    if any(not e.dissolved and not e.holds_anchor
           for e in node.owned_repl.values()):
        return
    if node.c_old and not node.c_old_acked >= node.c_old:
        return
    node.update_acked = True
    if node.p_old is not None:
        node.kernel.send(node.uid, node.p_old, m.UpdateAck(node.uid))
        node.p_old = None
        node.c_old = None
        node.c_old_acked = set()
        if node.is_replacement:
            _offer_dissolution(node)
        return
    _anchor_end_phase(node)


def _offer_dissolution(node) -> None:
    if node.anchor is not None:
        return  # acting anchor dissolves only after handing the state off
    node.kernel.send(node.uid, node.responsible_ref.uid,
                     m.ReadyToDissolve(node.ref))


def _anchor_end_phase(node) -> None:
    """All acks are in: migrate the anchor state or end the phase here."""
    acc = node.anchor
    node.c_old = None
    node.c_old_acked = set()
    i_am_min = node.pred.order_key() > node.ref.order_key()
    if i_am_min and not node.is_replacement:
        _finish_update_phase(node)
        return
    snapshot = acc.snapshot()
    node.anchor = None
    if i_am_min:
        # Dissolving acting anchor: the post-dissolution minimum is our succ.
        node.send(node.succ, m.AnchorMigrate(snapshot, walk=False, sender=node.ref))
    else:
        node.send(node.pred, m.AnchorMigrate(snapshot, walk=True, sender=node.ref))
    if node.is_replacement:
        _offer_dissolution(node)


def _finish_update_phase(node) -> None:
    acc = node.anchor
    acc.update_active = False
    acc.pending_joins = 0
    acc.pending_leaves = 0
    node.recorder.update_phase_ended(node.kernel.now, node.process_id)
    node.paused = False
    _forward_phase_end(node)


def on_anchor_migrate(node, src_uid: int, msg: m.AnchorMigrate) -> None:
    from distqueue.node import AnchorAccount

    if msg.walk and node.pred.order_key() < node.ref.order_key():
        node.send(node.pred, msg)
        return
    assert node.anchor is None, "two anchors alive"
    node.anchor = AnchorAccount.from_snapshot(msg.snapshot)
    _finish_update_phase(node)
    node.kernel.send(node.uid, msg.sender.uid, m.PhaseEnd())


def on_phase_end(node, src_uid: int, msg: m.PhaseEnd) -> None:
    if not node.paused:
        return
    node.paused = False
    _forward_phase_end(node)


def _forward_phase_end(node) -> None:
    sent = set()
    for ref in node.tree_children() + node.wards:
        if ref.uid not in sent:
            sent.add(ref.uid)
            node.send(ref, m.PhaseEnd())


# -- leave ------------------------------------------------------------------------------

def request_leave(node) -> None:
    from distqueue.node import LeaveMode

    assert not node.ward_mode, "a joining node cannot leave"
    assert node.leave_mode is LeaveMode.NONE
    node.leave_mode = LeaveMode.ASKING
    node.leave_retry_at = node.kernel.now


def maintenance_tick(node) -> None:
    """Per-timeout duties independent of the pipeline: answer pending drain
    checks and advance this node's own leave, if any."""
    from distqueue.node import LeaveMode

    _drain_checks_tick(node)
    mode = node.leave_mode
    if mode in (LeaveMode.ASKING, LeaveMode.POSTPONED):
        if node.leave_granted:
            _try_start_drain(node)
        elif node.kernel.now >= node.leave_retry_at:
            node.send(node.pred, m.LeaveAsk(node.ref))
            node.leave_retry_at = node.kernel.now + LEAVE_RETRY_STEPS
    elif mode is LeaveMode.DRAINING:
        if (node.drain_checked and not node.drain_waiting
                and node.kernel.outstanding_from(node.uid) == 0):
            node.leave_mode = LeaveMode.GONE
            node.kernel.depart(node.uid, forward_uid=node.forward_to.uid)
            node.sim.note_departed(node)


def _try_start_drain(node) -> None:
    from distqueue.node import LeaveMode, Stage

    if (node.stage is not Stage.AGGREGATING or node.paused
            or node.p_old is not None or node.pending_intros
            or node.outstanding_ops or node.granted_to_right
            or node.buf.has_content() or node.child_batches):
        return
    node.leave_mode = LeaveMode.FREEZING
    node.send(node.pred, m.SpawnRequest(node.ref, _snapshot_state(node)))


def _snapshot_state(node) -> dict:
    return {
        "pred": node.pred,
        "succ": node.succ,
        "siblings": dict(node.siblings),
        "store": node.store,
        "parked": node.parked,
        "handoffs": list(node.handoffs),
        "wards": list(node.wards),
        "anchor": node.anchor,
        "buf": node.buf,
        "child_batches": dict(node.child_batches),
        "owned_repl": dict(node.owned_repl),
        "granted": set(node.granted_to_right),
    }


def on_leave_ask(node, src_uid: int, msg: m.LeaveAsk) -> None:
    from distqueue.node import LeaveMode

    asker = msg.asker
    if node.leave_mode is LeaveMode.NONE:
        granted = True
    elif node.process_id == asker.process_id:
        granted = False   # own sibling; wait until I am replaced
    else:
        granted = node.process_id > asker.process_id
    if granted:
        node.granted_to_right.add(asker.uid)
    node.kernel.send(node.uid, asker.uid, m.LeaveReply(granted))


def on_leave_reply(node, src_uid: int, msg: m.LeaveReply) -> None:
    from distqueue.node import LeaveMode

    if node.leave_mode not in (LeaveMode.ASKING, LeaveMode.POSTPONED):
        return
    if msg.granted:
        node.leave_granted = True
    else:
        node.leave_mode = LeaveMode.POSTPONED


def on_spawn_request(node, src_uid: int, msg: m.SpawnRequest) -> None:
    from distqueue.node import VirtualNode

    leaver = msg.leaver
    st = msg.state
    ref = NodeRef(node.sim.next_uid(), leaver.process_id, leaver.kind,
                  leaver.label)
    repl = VirtualNode(node.sim, ref, host_process=node.process_id,
                       is_replacement=True)
    repl.pred = st["pred"]
    repl.succ = st["succ"]
    repl.siblings = st["siblings"]
    repl.store = st["store"]
    repl.parked = st["parked"]
    repl.handoffs = st["handoffs"]
    repl.wards = st["wards"]
    repl.anchor = st["anchor"]
    repl.buf = st["buf"]
    repl.child_batches = st["child_batches"]
    repl.owned_repl = st["owned_repl"]
    repl.granted_to_right = st["granted"]
    repl.responsible_ref = node.ref
    repl.replaced_uid = leaver.uid
    node.kernel.register(repl)
    node.sim.note_replacement(repl)
    node.owned_repl[ref.uid] = ReplacementEntry(ref, holds_anchor=st["anchor"] is not None)
    node.buf.bump_leave()

    repl.send(repl.pred, m.RepointSucc(ref, leaver.uid))
    repl.send(repl.succ, m.RepointPred(ref, leaver.uid))
    for kind, sib in sorted(repl.siblings.items()):
        repl.send(sib, m.SiblingUpdate(leaver.kind, ref, leaver.uid))
    for w in repl.wards:
        repl.send(w, m.ResponsibleChanged(ref))
    for entry in repl.owned_repl.values():
        repl.send(entry.ref, m.ResponsibleChanged(ref))
    node.kernel.send(node.uid, leaver.uid, m.ReplacementUp(ref))


def on_replacement_up(node, src_uid: int, msg: m.ReplacementUp) -> None:
    from distqueue.node import LeaveMode

    node.leave_mode = LeaveMode.DRAINING
    node.forward_to = msg.replacement
    contacts: set[int] = set()
    for ref in ([node.pred, node.succ] + list(node.siblings.values())
                + node.wards + [e.ref for e in node.owned_repl.values()]):
        if ref is not None and ref.uid not in (node.uid, msg.replacement.uid):
            contacts.add(ref.uid)
    for src, payload in node.freeze_buffer:
        if src not in (node.uid, msg.replacement.uid) and src in node.kernel.nodes:
            contacts.add(src)
        node.send(node.forward_to, payload)
    node.freeze_buffer = []
    node.drain_waiting = set(contacts)
    node.drain_checked = True
    for uid in sorted(contacts):
        node.kernel.send(node.uid, uid, m.DrainCheck(node.uid, msg.replacement))


def _repoint_everywhere(node, old_uid: int, new: NodeRef) -> None:
    if node.pred is not None and node.pred.uid == old_uid:
        node.pred = new
    if node.succ is not None and node.succ.uid == old_uid:
        node.succ = new
    for kind, sib in list(node.siblings.items()):
        if sib.uid == old_uid:
            node.siblings[kind] = new
    node.wards = [new if w.uid == old_uid else w for w in node.wards]
    node.handoffs = [(lbl, new if r.uid == old_uid else r)
                     for lbl, r in node.handoffs]
    if node.responsible is not None and node.responsible.uid == old_uid:
        node.responsible = new
    if node.responsible_ref is not None and node.responsible_ref.uid == old_uid:
        node.responsible_ref = new
    if node.forward_to is not None and node.forward_to.uid == old_uid:
        node.forward_to = new
    if node.p_old == old_uid:
        node.p_old = new.uid


def on_drain_check(node, src_uid: int, msg: m.DrainCheck) -> None:
    _repoint_everywhere(node, msg.leaver_uid, msg.replacement)
    node.granted_to_right.discard(msg.leaver_uid)
    edges = [node.uid]
    if node.replaced_uid is not None:
        # Replacements vouch for the node they replaced as well; its final
        # sends to the leaver may still be awaiting acknowledgments.
        edges.append(node.replaced_uid)
    node.pending_drain_confirms.append((msg.leaver_uid, tuple(edges)))
    _drain_checks_tick(node)


def _drain_checks_tick(node) -> None:
    if not node.pending_drain_confirms:
        return
    still = []
    for leaver_uid, edges in node.pending_drain_confirms:
        if all(node.kernel.edge_outstanding(e, leaver_uid) == 0 for e in edges):
            node.kernel.send(node.uid, leaver_uid,
                             m.DrainConfirm(leaver_uid, node.uid))
        else:
            still.append((leaver_uid, edges))
    node.pending_drain_confirms = still


def on_drain_confirm(node, src_uid: int, msg: m.DrainConfirm) -> None:
    node.drain_waiting.discard(msg.confirmer_uid)


def on_repoint_pred(node, src_uid: int, msg: m.RepointPred) -> None:
    node.pred = msg.new


def on_repoint_succ(node, src_uid: int, msg: m.RepointSucc) -> None:
    node.succ = msg.new
    node.granted_to_right.discard(msg.old_uid)


def on_sibling_update(node, src_uid: int, msg: m.SiblingUpdate) -> None:
    node.siblings[msg.kind] = msg.new


# -- replacement dissolution --------------------------------------------------------------

def on_own_replacement(node, src_uid: int, msg: m.OwnReplacement) -> None:
    node.owned_repl[msg.ref.uid] = ReplacementEntry(msg.ref, msg.holds_anchor)


def on_ready_to_dissolve(node, src_uid: int, msg: m.ReadyToDissolve) -> None:
    entry = node.owned_repl.get(msg.ref.uid)
    assert entry is not None, "dissolution offer from a foreign replacement"
    entry.ready = True
    node.send(msg.ref, m.Dissolve())


def on_dissolve(node, src_uid: int, msg: m.Dissolve) -> None:
    assert node.is_replacement and node.anchor is None
    items = tuple(dht.stored_items(node))
    data = m.DissolveData(items=items, parked=tuple(node.parked),
                          wards=tuple(node.wards),
                          handoffs=tuple(node.handoffs),
                          new_succ=node.succ, dissolved_uid=node.uid)
    node.send(node.pred, data)
    node.send(node.succ, m.RepointPred(node.pred, node.uid))
    node.kernel.send(node.uid, node.responsible_ref.uid, m.Dissolved(node.uid))
    node.store = {}
    node.parked = []
    node.wards = []
    node.handoffs = []
    node.is_stub = True
    node.forward_to = node.pred


def on_dissolve_data(node, src_uid: int, msg: m.DissolveData) -> None:
    dht.install_items(node, msg.items)
    node.parked.extend(msg.parked)
    for w in msg.wards:
        node.wards.append(w)
    node.wards.sort(key=lambda w: cycle_dist(node.label, w.label))
    node.handoffs.extend(msg.handoffs)
    node.succ = msg.new_succ
    dht.resolve_all_parked(node)


def on_dissolved(node, src_uid: int, msg: m.Dissolved) -> None:
    entry = node.owned_repl.get(msg.uid)
    assert entry is not None
    entry.dissolved = True
