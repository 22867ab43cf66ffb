"""The virtual-node state machine hosted inside the simulation kernel.

A node carries the request buffer and in-flight batch of the aggregation
pipeline, its slice of the DHT, its cycle neighborhood, and the membership
bookkeeping (wards it is responsible for, replacements it owns, leave
progress).  Message handling is dispatched to the concern modules; the
timeout below sequences the per-step duties: leave progress, update-phase
acknowledgment, then the stage-1 flush gate.
"""

from __future__ import annotations

import enum
from typing import Optional

from distqueue import dht, membership, queue_core
from distqueue import messages as m
from distqueue.batch import Batch, ReqKey, SelfBuffer
from distqueue.topology import Kind, NodeRef


class Stage(enum.Enum):
    AGGREGATING = "aggregating"
    AWAITING = "awaiting-intervals"


class LeaveMode(enum.Enum):
    NONE = "active"
    ASKING = "asking-permission"
    POSTPONED = "postponed-behind-left-neighbor"
    FREEZING = "freezing"
    DRAINING = "draining"
    GONE = "gone"


class AnchorAccount:
    """Mutable anchor-only state: the occupied interval and checker counter."""

    __slots__ = ("first", "last", "counter", "ticket",
                 "pending_joins", "pending_leaves", "phase", "update_active")

    def __init__(self, first=0, last=-1, counter=1, ticket=0,
                 pending_joins=0, pending_leaves=0, phase=0,
                 update_active=False):
        self.first = first
        self.last = last
        self.counter = counter
        self.ticket = ticket
        self.pending_joins = pending_joins
        self.pending_leaves = pending_leaves
        self.phase = phase
        self.update_active = update_active

    def snapshot(self) -> m.AnchorSnapshot:
        return m.AnchorSnapshot(self.first, self.last, self.counter,
                                self.ticket, self.pending_joins,
                                self.pending_leaves, self.phase,
                                self.update_active)

    @staticmethod
    def from_snapshot(s: m.AnchorSnapshot) -> "AnchorAccount":
        return AnchorAccount(s.first, s.last, s.counter, s.ticket,
                             s.pending_joins, s.pending_leaves, s.phase,
                             s.update_active)


class VirtualNode:
    def __init__(self, sim, ref: NodeRef, host_process: int,
                 is_replacement: bool = False, ward_mode: bool = False):
        self.sim = sim
        self.ref = ref
        self.uid = ref.uid
        self.process_id = ref.process_id
        self.kind = ref.kind
        self.label = ref.label
        self.host_process = host_process
        self.is_replacement = is_replacement

        # cycle neighborhood; wards start detached
        self.pred: Optional[NodeRef] = None
        self.succ: Optional[NodeRef] = None
        self.siblings: dict[Kind, NodeRef] = {}

        # aggregation pipeline
        self.buf = SelfBuffer(stack=sim.ctx.stack_mode)
        self.child_batches: dict[int, tuple[NodeRef, Batch]] = {}
        self.stage = Stage.AGGREGATING
        self.inflight: list[tuple[Optional[NodeRef], Batch]] | None = None
        self.inflight_elements: dict[ReqKey, object] = {}
        self.anchor: Optional[AnchorAccount] = None

        # DHT slice
        self.store: dict = {}           # queue: pos -> element, stack: pos -> {ticket: element}
        self.parked: list[dht.ParkedGet] = []
        self.handoffs: list[tuple[int, NodeRef]] = []

        # membership
        self.ward_mode = ward_mode
        self.responsible: Optional[NodeRef] = None
        self.wards: list[NodeRef] = []
        self.paused = False
        self.p_old: Optional[int] = None        # uid of the old-tree parent
        self.c_old: set[int] | None = None
        self.c_old_acked: set[int] = set()
        self.update_acked = False
        self.pending_intros: set[int] = set()
        self.owned_repl: dict[int, membership.ReplacementEntry] = {}
        self.responsible_ref: Optional[NodeRef] = None  # replacements only
        self.replaced_uid: Optional[int] = None         # replacements only

        # leave progress
        self.leave_mode = LeaveMode.NONE
        self.leave_retry_at = 0
        self.leave_granted = False
        self.granted_to_right: set[int] = set()
        self.drain_waiting: set[int] = set()
        self.drain_checked = False
        self.pending_drain_confirms: list[tuple[int, tuple[int, ...]]] = []
        self.forward_to: Optional[NodeRef] = None
        self.freeze_buffer: list[tuple[int, object]] = []
        self.is_stub = False

        # stack stage-4 barrier
        self.outstanding_ops: set[ReqKey] = set()

        self._handlers = {
            m.Aggregate: queue_core.on_aggregate,
            m.Serve: queue_core.on_serve,
            m.Routed: dht.on_routed,
            m.Direct: dht.on_direct,
            m.GetReply: dht.on_get_reply,
            m.PutStored: dht.on_put_stored,
            m.JoinRequest: membership.on_join_request,
            m.Adopt: membership.on_adopt,
            m.WardDataTransfer: membership.on_ward_data_transfer,
            m.DataHandover: membership.on_data_handover,
            m.IntegrateNeighbors: membership.on_integrate_neighbors,
            m.RepointPred: membership.on_repoint_pred,
            m.RepointSucc: membership.on_repoint_succ,
            m.SiblingUpdate: membership.on_sibling_update,
            m.ResponsibleChanged: membership.on_responsible_changed,
            m.UpdateAck: membership.on_update_ack,
            m.PhaseEnd: membership.on_phase_end,
            m.AnchorMigrate: membership.on_anchor_migrate,
            m.LeaveAsk: membership.on_leave_ask,
            m.LeaveReply: membership.on_leave_reply,
            m.SpawnRequest: membership.on_spawn_request,
            m.ReplacementUp: membership.on_replacement_up,
            m.DrainCheck: membership.on_drain_check,
            m.DrainConfirm: membership.on_drain_confirm,
            m.OwnReplacement: membership.on_own_replacement,
            m.ReadyToDissolve: membership.on_ready_to_dissolve,
            m.Dissolve: membership.on_dissolve,
            m.DissolveData: membership.on_dissolve_data,
            m.Dissolved: membership.on_dissolved,
        }

    # -- context shortcuts -----------------------------------------------------

    @property
    def kernel(self):
        return self.sim.kernel

    @property
    def recorder(self):
        return self.sim.recorder

    @property
    def ctx(self):
        return self.sim.ctx

    def send(self, dst: NodeRef, payload, idle: bool = False) -> int:
        return self.kernel.send(self.uid, dst.uid, payload, idle=idle)

    def sibling_ref(self, kind: Kind) -> NodeRef:
        return self.siblings[kind]

    def pred_ref(self) -> NodeRef:
        return self.pred

    def succ_ref(self) -> NodeRef:
        return self.succ

    # -- tree links (local rules) ------------------------------------------------

    def parent(self) -> Optional[NodeRef]:
        if self.ward_mode:
            return self.responsible
        from distqueue.aggtree import parent_of
        return parent_of(self.ref, self.pred, self.sibling_ref)

    def tree_children(self) -> list[NodeRef]:
        if self.ward_mode:
            return []
        from distqueue.aggtree import children_of
        return children_of(self.ref, self.succ, self.sibling_ref)

    def expected_children(self) -> list[NodeRef]:
        return self.tree_children() + self.wards

    def is_anchor(self) -> bool:
        return self.anchor is not None

    # -- kernel node protocol -------------------------------------------------------

    def on_message(self, src_uid: int, payload) -> None:
        if self.leave_mode is LeaveMode.FREEZING:
            if isinstance(payload, m.ReplacementUp):
                membership.on_replacement_up(self, src_uid, payload)
            elif isinstance(payload, m.DrainConfirm):
                membership.on_drain_confirm(self, src_uid, payload)
            elif isinstance(payload, m.DrainCheck):
                membership.on_drain_check(self, src_uid, payload)
            else:
                self.freeze_buffer.append((src_uid, payload))
            return
        if self.forward_to is not None:
            if isinstance(payload, m.DrainConfirm):
                membership.on_drain_confirm(self, src_uid, payload)
            elif isinstance(payload, m.DrainCheck):
                membership.on_drain_check(self, src_uid, payload)
            elif isinstance(payload, m.Dissolve):
                membership.on_dissolve(self, src_uid, payload)
            else:
                if (self.leave_mode is LeaveMode.DRAINING
                        and src_uid not in self.drain_waiting
                        and src_uid in self.kernel.nodes):
                    # A first-contact sender showed up mid-drain; hold the
                    # departure until it has confirmed and repointed.
                    self.drain_waiting.add(src_uid)
                    self.kernel.send(self.uid, src_uid,
                                     m.DrainCheck(self.uid, self.forward_to))
                self.send(self.forward_to, payload)
            return
        self._handlers[type(payload)](self, src_uid, payload)

    def on_kernel_ack(self, msg_id: int) -> None:
        self.pending_intros.discard(msg_id)

    def on_timeout(self) -> None:
        membership.maintenance_tick(self)
        if self.is_stub or self.leave_mode in (LeaveMode.FREEZING,
                                               LeaveMode.DRAINING,
                                               LeaveMode.GONE):
            return
        membership.update_phase_tick(self)
        queue_core.try_flush(self)

    def has_work(self) -> bool:
        if self.is_stub:
            return False
        if self.is_replacement:
            return True
        if self.leave_mode is not LeaveMode.NONE:
            return True
        if self.paused or self.p_old is not None:
            return True
        if self.buf.has_content() or self.parked or self.outstanding_ops:
            return True
        if self.pending_intros or self.wards or self.pending_drain_confirms:
            return True
        if self.inflight is not None and any(
                not b.is_empty() for _, b in self.inflight):
            return True
        return any(not b.is_empty() for _, b in self.child_batches.values())
