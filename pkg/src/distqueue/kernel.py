"""Deterministic discrete-event message kernel with pluggable delivery policy.

Time advances in integer steps.  Every envelope sent in step i is delivered
in step i+1 or later depending on the scheduler policy; deliveries within a
step run in ascending (destination label, message id) order, after which
every live node's timeout handler fires exactly once.  The kernel
acknowledges every delivered non-acknowledgment envelope back to its sender
and exposes per-edge outstanding-ack counts, which the leave protocol uses to
drain a departing node's channels.

Identical (policy, seed, workload) runs replay to identical event logs; all
scheduling randomness comes from the policy's private generator.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Protocol

from distqueue.recorder import Recorder


class SchedulerMode(enum.Enum):
    SYNCHRONOUS = "sync"
    ASYNC_RANDOM = "async-random"
    ASYNC_ADVERSARIAL = "async-adversarial"


@dataclass
class SchedulerPolicy:
    """Delivery-delay policy.

    Synchronous delivers every message exactly one step after sending.
    AsyncRandom draws a delay uniformly from [1, max_delay].  Adversarial
    consumes `script` entries, one per data-plane message in send order, as
    delays (control traffic keeps delay 1); when the script is exhausted the
    delay falls back to 1, which bounds how long any message can be
    postponed.
    """

    mode: SchedulerMode = SchedulerMode.SYNCHRONOUS
    seed: int = 0
    max_delay: int = 1
    script: tuple[int, ...] = ()

    def __post_init__(self):
        self._rng = random.Random(self.seed)
        self._script_pos = 0

    def delay(self, data_plane: bool) -> int:
        if self.mode is SchedulerMode.SYNCHRONOUS:
            return 1
        if self.mode is SchedulerMode.ASYNC_RANDOM:
            return self._rng.randint(1, max(1, self.max_delay))
        if data_plane and self._script_pos < len(self.script):
            d = self.script[self._script_pos]
            self._script_pos += 1
            return max(1, d)
        return 1


class Node(Protocol):
    uid: int
    label: int

    def on_message(self, src_uid: int, payload) -> None: ...

    def on_timeout(self) -> None: ...

    def on_kernel_ack(self, msg_id: int) -> None: ...

    def has_work(self) -> bool: ...


@dataclass(slots=True)
class Envelope:
    msg_id: int
    src: int
    dst: int
    payload: object
    send_time: int
    deliver_time: int
    is_ack: bool = False
    idle: bool = False       # pure heartbeat traffic, ignored for quiescence
    acked_msg: int = -1


class LivenessError(RuntimeError):
    """Raised when the step limit is reached with protocol work pending."""

    def __init__(self, message: str, pending: list[str]):
        super().__init__(message + "; pending: " + "; ".join(pending[:12]))
        self.pending = pending


class Kernel:
    def __init__(self, policy: SchedulerPolicy, recorder: Recorder | None = None):
        self.policy = policy
        self.recorder = recorder or Recorder()
        self.now = 0
        self.nodes: dict[int, Node] = {}
        self.departed: set[int] = set()
        self._pending: dict[int, list[Envelope]] = {}
        self._pending_count = 0
        self._next_msg = 0
        self.outstanding_acks: dict[tuple[int, int], int] = {}
        self.sent_ids: list[int] = []
        self.delivered_ids: list[int] = []
        self.forwards: dict[int, int] = {}
        self.tombstone_hits = 0

    # -- registry -----------------------------------------------------------

    def register(self, node: Node) -> None:
        assert node.uid not in self.nodes and node.uid not in self.departed
        self.nodes[node.uid] = node

    def depart(self, uid: int, forward_uid: int | None = None) -> None:
        """Remove a node for good.

        A departing node that was replaced leaves a forwarding tombstone;
        drain accounting makes hits rare, but non-FIFO delivery admits a
        first-contact straggler that only the replacement can serve.  Sends
        to a departed node with no replacement are protocol bugs.
        """
        del self.nodes[uid]
        self.departed.add(uid)
        if forward_uid is not None:
            self.forwards[uid] = forward_uid

    def _resolve(self, dst: int) -> int:
        hops = 0
        while dst in self.departed:
            assert dst in self.forwards, \
                f"message for departed node {dst} with no replacement"
            dst = self.forwards[dst]
            hops += 1
            assert hops < 64, "tombstone forwarding cycle"
        if hops:
            self.tombstone_hits += 1
        return dst

    # -- sending ------------------------------------------------------------

    def send(self, src: int, dst: int, payload, idle: bool = False) -> int:
        dst = self._resolve(dst)
        assert dst in self.nodes, f"send to unknown node {dst}"
        data_plane = getattr(payload, "data_plane", False)
        delay = self.policy.delay(data_plane)
        env = Envelope(self._next_msg, src, dst, payload,
                       self.now, self.now + delay, idle=idle)
        self._next_msg += 1
        self._queue(env)
        edge = (src, dst)
        self.outstanding_acks[edge] = self.outstanding_acks.get(edge, 0) + 1
        self.sent_ids.append(env.msg_id)
        self.recorder.message_sent(self.now, src, dst,
                                   type(payload).__name__, env.msg_id)
        return env.msg_id

    def _queue(self, env: Envelope) -> None:
        self._pending.setdefault(env.deliver_time, []).append(env)
        self._pending_count += 1

    def _send_ack(self, env: Envelope) -> None:
        # Kernel-level ack; never acked itself and invisible to handlers.
        if env.src in self.departed or env.src not in self.nodes:
            # The sender left before its message was consumed; the drain
            # protocol guarantees this only happens for forwarded residuals.
            return
        ack = Envelope(self._next_msg, env.dst, env.src, None, self.now,
                       self.now + self.policy.delay(False),
                       is_ack=True, idle=env.idle, acked_msg=env.msg_id)
        self._next_msg += 1
        self._queue(ack)

    # -- stepping -------------------------------------------------------------

    def step(self) -> list[Envelope]:
        """Advance time one step; returns the envelopes delivered in it."""
        self.now += 1
        due = self._pending.pop(self.now, [])
        self._pending_count -= len(due)
        due.sort(key=lambda e: (self.nodes[e.dst].label if e.dst in self.nodes else 0,
                                e.msg_id))
        delivered: list[Envelope] = []
        for env in due:
            if env.is_ack:
                edge = (env.dst, env.src)
                self.outstanding_acks[edge] -= 1
                node = self.nodes.get(env.dst)
                if node is not None:
                    node.on_kernel_ack(env.acked_msg)
                continue
            node = self.nodes.get(env.dst)
            if node is None:
                # Departed between send and delivery; hand to the replacement.
                node = self.nodes[self._resolve(env.dst)]
            self.delivered_ids.append(env.msg_id)
            self.recorder.message_delivered(self.now, env.src, env.dst,
                                            type(env.payload).__name__, env.msg_id)
            self._send_ack(env)
            node.on_message(env.src, env.payload)
            delivered.append(env)
        for node in sorted(self.nodes.values(), key=lambda n: (n.label, n.uid)):
            if node.uid in self.nodes:
                node.on_timeout()
        return delivered

    # -- ack observation -----------------------------------------------------

    def edge_outstanding(self, src: int, dst: int) -> int:
        """Acks the node `src` is still waiting for on its edge to `dst`."""
        return self.outstanding_acks.get((src, dst), 0)

    def outstanding_from(self, src: int) -> int:
        return sum(v for (s, _), v in self.outstanding_acks.items() if s == src)

    # -- quiescence -------------------------------------------------------------

    def busy_envelopes(self) -> int:
        return sum(1 for batch in self._pending.values()
                   for e in batch if not e.idle)

    def is_quiescent(self) -> bool:
        if self.busy_envelopes():
            return False
        return all(not n.has_work() for n in self.nodes.values())

    def run_until_quiescent(self, limit: int) -> int:
        """Steps until no protocol work remains; the step index on success.

        Heartbeat traffic (empty batches and their interval replies) keeps
        flowing forever by design and is excluded from the check.
        """
        start = self.now
        while self.now - start < limit:
            if self.is_quiescent():
                return self.now
            self.step()
        if self.is_quiescent():
            return self.now
        pending = [f"envelope {e.msg_id} {type(e.payload).__name__} {e.src}->{e.dst}"
                   for batch in self._pending.values() for e in batch if not e.idle]
        pending += [f"node {n.uid} busy" for n in self.nodes.values() if n.has_work()]
        raise LivenessError(f"no quiescence within {limit} steps", pending)

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.step()
