"""Network construction and run control.

Builds the initial cycle of virtual nodes for n processes, injects workload
at middle nodes, drives joins and leaves, and watches run-level completion
(a join is done when all three of the process's nodes are integrated, a
leave when all three departed).  Also hosts the audits used throughout the
tests: cycle walk, tree consistency and DHT inventory conservation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from distqueue import dht, membership
from distqueue import messages as m
from distqueue.kernel import Kernel, SchedulerMode, SchedulerPolicy
from distqueue.node import LeaveMode, VirtualNode
from distqueue.recorder import Recorder
from distqueue.topology import (LABEL_SALT, Kind, NodeRef, label_of,
                                make_route)

JOIN_RETRY_STEPS = 80


@dataclass
class SimConfig:
    n_processes: int = 4
    stack_mode: bool = False
    scheduler: SchedulerPolicy = field(default_factory=SchedulerPolicy)
    label_salt: int = LABEL_SALT
    update_alpha: float = 0.0
    stack_barrier: bool = True
    local_combine: bool = True
    log_messages: bool = False


class Ctx:
    """Shared read-mostly context handed to every node."""

    def __init__(self, cfg: SimConfig):
        self.stack_mode = cfg.stack_mode
        self.update_alpha = cfg.update_alpha
        self.stack_barrier = cfg.stack_barrier
        self.local_combine = cfg.local_combine
        self.n_processes = cfg.n_processes


@dataclass
class ProcessInfo:
    pid: int
    state: str                      # live | joining | leaving | gone
    nodes: dict[Kind, int]          # kind -> node uid
    op_count: int = 0
    join_sent_at: int = 0
    join_req: tuple | None = None
    leave_req: tuple | None = None


class Simulation:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.ctx = Ctx(cfg)
        self.recorder = Recorder(log_messages=cfg.log_messages)
        self.kernel = Kernel(cfg.scheduler, self.recorder)
        self.processes: dict[int, ProcessInfo] = {}
        self.nodes: dict[int, VirtualNode] = {}
        self._uid_counter = 0
        self._element_counter = 0
        self._build_initial(cfg.n_processes)

    # -- construction -------------------------------------------------------

    def next_uid(self) -> int:
        uid = self._uid_counter
        self._uid_counter += 1
        return uid

    def _build_initial(self, n: int) -> None:
        refs: list[NodeRef] = []
        by_identity: dict[tuple[int, Kind], NodeRef] = {}
        for pid in range(n):
            for kind in (Kind.LEFT, Kind.MIDDLE, Kind.RIGHT):
                ref = NodeRef(self.next_uid(), pid, kind,
                              label_of(pid, kind, self.cfg.label_salt))
                refs.append(ref)
                by_identity[(pid, kind)] = ref
        if len({r.label for r in refs}) != len(refs):
            raise ValueError("label collision at genesis; change the salt")
        refs.sort(key=NodeRef.order_key)
        for pid in range(n):
            self.processes[pid] = ProcessInfo(
                pid, "live", {k: by_identity[(pid, k)].uid for k in Kind})
        for i, ref in enumerate(refs):
            node = VirtualNode(self, ref, host_process=ref.process_id)
            node.pred = refs[i - 1]
            node.succ = refs[(i + 1) % len(refs)]
            node.siblings = {k: by_identity[(ref.process_id, k)]
                             for k in Kind if k != ref.kind}
            self.nodes[ref.uid] = node
            self.kernel.register(node)
        anchor = self.nodes[refs[0].uid]
        from distqueue.node import AnchorAccount
        anchor.anchor = AnchorAccount()

    def node_of(self, pid: int, kind: Kind) -> VirtualNode:
        return self.nodes[self.processes[pid].nodes[kind]]

    def live_node_count(self) -> int:
        return sum(1 for n in self.kernel.nodes.values()
                   if not getattr(n, "is_stub", False))

    # -- workload -------------------------------------------------------------

    def issue(self, pid: int, is_insert: bool) -> tuple:
        """Inject one request at a process's middle node; returns the key."""
        info = self.processes[pid]
        assert info.state in ("live", "joining"), f"process {pid} cannot issue"
        node = self.node_of(pid, Kind.MIDDLE)
        op_index = info.op_count
        info.op_count += 1
        req = (pid, op_index)
        now = self.kernel.now
        if self.cfg.stack_mode:
            kind = "Push" if is_insert else "Pop"
        else:
            kind = "Enq" if is_insert else "Deq"
        element = None
        if is_insert:
            element = req  # unique by construction
        self.recorder.request_issued(now, pid, op_index, kind, element)
        if self.cfg.stack_mode:
            if is_insert:
                node.buf.record_push(req, element)
            elif self.ctx.local_combine:
                match = node.buf.record_pop(req)
                if match is not None:
                    push_req, pushed = match
                    self.recorder.locally_combined(now, push_req, req)
                    self.recorder.request_completed(now, push_req, pushed)
                    self.recorder.request_completed(now, req, pushed)
            else:
                node.buf.pop_reqs.append(req)
        else:
            node.buf.record_queue(is_insert, req, element)
        return req

    # -- membership driving ------------------------------------------------------

    def start_join(self, pid: int, entry_pid: int) -> None:
        assert pid not in self.processes
        info = ProcessInfo(pid, "joining", {}, join_sent_at=self.kernel.now)
        self.processes[pid] = info
        refs = {}
        for kind in (Kind.LEFT, Kind.MIDDLE, Kind.RIGHT):
            ref = NodeRef(self.next_uid(), pid, kind,
                          label_of(pid, kind, self.cfg.label_salt))
            refs[kind] = ref
        for kind, ref in refs.items():
            node = VirtualNode(self, ref, host_process=pid, ward_mode=True)
            node.siblings = {k: r for k, r in refs.items() if k != kind}
            self.nodes[ref.uid] = node
            self.kernel.register(node)
            info.nodes[kind] = ref.uid
        op_index = info.op_count
        info.op_count += 1
        info.join_req = (pid, op_index)
        self.recorder.request_issued(self.kernel.now, pid, op_index, "Join")
        self._send_join_requests(pid, entry_pid)
        self.ctx.n_processes += 1

    def _send_join_requests(self, pid: int, entry_pid: int) -> None:
        info = self.processes[pid]
        entry = self.node_of(entry_pid, Kind.MIDDLE)
        for kind in Kind:
            joiner = self.nodes[info.nodes[kind]].ref
            dht.route_or_handle(entry, m.JoinRequest(joiner), joiner.label)
        info.join_sent_at = self.kernel.now

    def retry_stuck_joins(self, entry_pid: int) -> None:
        """Re-route join requests whose adoption never arrived (entry died)."""
        for info in self.processes.values():
            if info.state != "joining":
                continue
            if self.kernel.now - info.join_sent_at < JOIN_RETRY_STEPS:
                continue
            if any(self.nodes[uid].ward_mode and self.nodes[uid].responsible is None
                   for uid in info.nodes.values()):
                self._send_join_requests(info.pid, entry_pid)

    def start_leave(self, pid: int) -> None:
        info = self.processes[pid]
        assert info.state == "live", "only fully joined processes leave"
        live = [p for p in self.processes.values() if p.state == "live"]
        assert len(live) > 1, "the last process cannot leave"
        info.state = "leaving"
        op_index = info.op_count
        info.op_count += 1
        info.leave_req = (pid, op_index)
        self.recorder.request_issued(self.kernel.now, pid, op_index, "Leave")
        for uid in info.nodes.values():
            membership.request_leave(self.nodes[uid])

    # -- node lifecycle callbacks ----------------------------------------------------

    def note_replacement(self, node: VirtualNode) -> None:
        self.nodes[node.uid] = node

    def note_integrated(self, node: VirtualNode) -> None:
        info = self.processes.get(node.process_id)
        if info is None or info.state != "joining":
            return
        if all(not self.nodes[uid].ward_mode for uid in info.nodes.values()):
            info.state = "live"
            self.recorder.request_completed(self.kernel.now, info.join_req,
                                            "joined")

    def note_departed(self, node: VirtualNode) -> None:
        info = self.processes.get(node.process_id)
        if info is None or info.state != "leaving":
            return
        if all(self.nodes[uid].leave_mode is LeaveMode.GONE
               for uid in info.nodes.values()):
            info.state = "gone"
            self.recorder.request_completed(self.kernel.now, info.leave_req,
                                            "left")
            self.ctx.n_processes -= 1

    # -- run control -------------------------------------------------------------------

    def step(self) -> None:
        self.kernel.step()

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.kernel.step()

    def has_pending_membership(self) -> bool:
        return any(p.state in ("joining", "leaving")
                   for p in self.processes.values())

    def is_quiescent(self) -> bool:
        return not self.has_pending_membership() and self.kernel.is_quiescent()

    def run_until_quiescent(self, limit: int = 100000) -> int:
        from distqueue.kernel import LivenessError
        start = self.kernel.now
        while self.kernel.now - start < limit:
            if self.is_quiescent():
                return self.kernel.now
            self.kernel.step()
        if self.is_quiescent():
            return self.kernel.now
        pending = [f"process {p.pid} {p.state}"
                   for p in self.processes.values()
                   if p.state in ("joining", "leaving")]
        if pending:
            raise LivenessError(f"membership stuck after {limit} steps", pending)
        return self.kernel.run_until_quiescent(0)  # raises with kernel detail

    # -- audits ---------------------------------------------------------------------------

    def cycle_nodes(self) -> list[VirtualNode]:
        """All nodes that should currently sit on the label cycle."""
        out = [n for n in self.kernel.nodes.values()
               if isinstance(n, VirtualNode) and not n.is_stub
               and not n.ward_mode and n.leave_mode is not LeaveMode.GONE]
        return sorted(out, key=lambda n: n.ref.order_key())

    def audit_cycle(self) -> None:
        """Walking succ pointers from the minimum visits everyone once."""
        ring = self.cycle_nodes()
        assert ring, "empty network"
        start = ring[0]
        seen = []
        cur = start
        for _ in range(len(ring) + 1):
            seen.append(cur.uid)
            nxt = cur.succ
            cur = self.nodes[nxt.uid]
            if cur.uid == start.uid:
                break
        assert sorted(seen) == sorted(n.uid for n in ring), \
            f"cycle walk saw {len(seen)} of {len(ring)} nodes"
        for node in ring:
            assert self.nodes[node.succ.uid].pred.uid == node.uid, \
                f"pred/succ mismatch at {node.uid}"

    def audit_tree(self) -> None:
        """Parent/children consistency and a spanning, acyclic tree."""
        ring = self.cycle_nodes()
        anchors = [n for n in ring if n.parent() is None]
        assert len(anchors) == 1, f"{len(anchors)} anchor candidates"
        assert anchors[0].is_anchor(), "topology minimum lacks anchor state"
        children = {n.uid: [c.uid for c in n.tree_children()] for n in ring}
        parent = {n.uid: (n.parent().uid if n.parent() else None) for n in ring}
        for uid, kids in children.items():
            for kid in kids:
                assert parent.get(kid) == uid, \
                    f"child {kid} of {uid} disagrees about its parent"
        for uid, p in parent.items():
            if p is not None:
                assert uid in children[p], \
                    f"{uid} names parent {p} which does not list it"
        # reachability
        seen = set()
        stack = [anchors[0].uid]
        while stack:
            u = stack.pop()
            assert u not in seen, "cycle in the aggregation tree"
            seen.add(u)
            stack.extend(children[u])
        assert seen == set(children), "aggregation tree does not span the ring"

    def tree_height(self) -> int:
        ring = self.cycle_nodes()
        children = {n.uid: [c.uid for c in n.tree_children()] for n in ring}
        root = next(n for n in ring if n.parent() is None)
        depth = {root.uid: 0}
        stack = [root.uid]
        best = 0
        while stack:
            u = stack.pop()
            for c in children[u]:
                depth[c] = depth[u] + 1
                best = max(best, depth[c])
                stack.append(c)
        return best

    def stored_inventory(self) -> list[tuple]:
        items = []
        for node in self.kernel.nodes.values():
            if isinstance(node, VirtualNode):
                items.extend(dht.stored_items(node))
        return sorted(items, key=repr)

    def new_element(self) -> tuple:
        self._element_counter += 1
        return (-1, self._element_counter)
