"""Labels, virtual-node identities and routing on the linearized De Bruijn cycle.

Every process emulates three virtual nodes.  The middle node's label is a
pseudorandom 64-bit fixed-point fraction of the process id; the left node sits
at half that value and the right node at the midpoint between the middle label
and 1.  All virtual nodes live on one sorted cycle; ownership of a point
p in [0,1) belongs to the node u with u <= p < succ(u), wrapping at the ends.

Routing to a point works in two phases: a De Bruijn phase that repeatedly
halves the current position while mixing in the target's bits (jumps are only
taken from middle nodes, whose sibling edges land exactly on the halved
point), followed by a short linear walk to the owner of the target.
"""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass

SCALE_BITS = 64
SCALE = 1 << SCALE_BITS
_MASK = SCALE - 1

LABEL_SALT = 0x5EED1ABE15
KEY_SALT = 0xD47A0F0E15


class Kind(enum.IntEnum):
    """Role of a virtual node within its process; order breaks label ties."""

    LEFT = 0
    MIDDLE = 1
    RIGHT = 2


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def middle_label(process_id: int, salt: int = LABEL_SALT) -> int:
    """Pseudorandom fixed-point label of a process's middle node."""
    return _splitmix64(process_id ^ _splitmix64(salt))


def label_of(process_id: int, kind: Kind, salt: int = LABEL_SALT) -> int:
    """Label of one of a process's three virtual nodes as a fixed-point int."""
    m = middle_label(process_id, salt)
    if kind is Kind.MIDDLE:
        return m
    if kind is Kind.LEFT:
        return m >> 1
    return (m >> 1) + (SCALE >> 1)


def position_key(position: int, salt: int = KEY_SALT) -> int:
    """Hash of a queue position into label space (the DHT placement key)."""
    return _splitmix64(position ^ _splitmix64(salt))


def as_fraction(label: int) -> float:
    return label / SCALE


@dataclass(frozen=True, slots=True)
class NodeRef:
    """Reference to a virtual node as carried inside messages.

    Receivers learn the kind and label of a node together with its address,
    which the cycle maintenance rules rely on.
    """

    uid: int
    process_id: int
    kind: Kind
    label: int

    def order_key(self) -> tuple[int, int, int]:
        return (self.label, self.process_id, int(self.kind))

    def __repr__(self) -> str:  # compact, for debugging and logs
        return f"{self.kind.name[0].lower()}({self.process_id})#{self.uid}"


def cycle_dist(a: int, b: int) -> int:
    """Clockwise (ascending-label) distance from a to b, wrapping at 1."""
    return (b - a) & _MASK


def owns(label: int, succ_label: int, point: int) -> bool:
    """Does the node at `label` own `point`, given its successor's label?

    Ownership interval is [label, succ_label) walking clockwise.  A node that
    is its own successor (single-node degenerate ring) owns everything.
    """
    span = cycle_dist(label, succ_label)
    if span == 0:
        return True
    return cycle_dist(label, point) < span


def debruijn_bits(target: int, n_processes: int) -> tuple[int, ...]:
    """Bits consumed during the De Bruijn phase of a route to `target`.

    Uses the top k = ceil(log2 n) + 2 bits of the target, consumed starting
    from the least significant bit of that prefix, so that after k halving
    jumps the position agrees with the target on its k-bit prefix.
    """
    k = max(1, math.ceil(math.log2(max(2, n_processes)))) + 2
    prefix = target >> (SCALE_BITS - k)
    return tuple((prefix >> i) & 1 for i in range(k))


@dataclass(frozen=True, slots=True)
class RouteState:
    """Remaining routing work carried inside a routed message."""

    target: int
    bits: tuple[int, ...]


def make_route(target: int, n_processes: int) -> RouteState:
    return RouteState(target, debruijn_bits(target, n_processes))


class NodeView:
    """What the router needs to know about the node holding a message."""

    kind: Kind
    label: int

    def pred_ref(self) -> NodeRef: ...

    def succ_ref(self) -> NodeRef: ...

    def sibling_ref(self, kind: Kind) -> NodeRef: ...


def route_next(view, state: RouteState) -> tuple[NodeRef, RouteState] | None:
    """One routing decision: the neighbor to forward to, or None on arrival.

    Arrival means this node owns the target point, i.e. it is the target's
    predecessor on the cycle.
    """
    succ = view.succ_ref()
    if owns(view.label, succ.label, state.target):
        return None
    if state.bits:
        if view.kind is Kind.MIDDLE:
            bit = state.bits[0]
            rest = RouteState(state.target, state.bits[1:])
            sib = view.sibling_ref(Kind.RIGHT if bit else Kind.LEFT)
            return sib, rest
        # Seek the nearest middle node to jump from; neighbor kinds are known.
        pred = view.pred_ref()
        if succ.kind is Kind.MIDDLE:
            return succ, state
        if pred.kind is Kind.MIDDLE:
            return pred, state
        return succ, state
    # Linear phase: walk the shorter way around toward the owner.
    fwd = cycle_dist(view.label, state.target)
    bwd = cycle_dist(state.target, view.label)
    return (succ, state) if fwd <= bwd else (view.pred_ref(), state)


class StaticRing:
    """A fully built, immutable cycle of virtual nodes, outside the simulator.

    Used for routing and ownership experiments and as an independent oracle
    for tests: ownership is computed by bisection over the sorted label list
    rather than by walking neighbor pointers.
    """

    def __init__(self, n_processes: int, salt: int = LABEL_SALT):
        self.n_processes = n_processes
        refs = []
        uid = 0
        for pid in range(n_processes):
            for kind in (Kind.LEFT, Kind.MIDDLE, Kind.RIGHT):
                refs.append(NodeRef(uid, pid, kind, label_of(pid, kind, salt)))
                uid += 1
        refs.sort(key=NodeRef.order_key)
        labels = [r.label for r in refs]
        if len(set(labels)) != len(labels):
            raise ValueError("label collision; choose another salt")
        self.nodes = refs
        self.labels = labels
        self._index = {r.uid: i for i, r in enumerate(refs)}
        self._by_identity = {(r.process_id, r.kind): r for r in refs}

    def pred(self, ref: NodeRef) -> NodeRef:
        return self.nodes[self._index[ref.uid] - 1]

    def succ(self, ref: NodeRef) -> NodeRef:
        return self.nodes[(self._index[ref.uid] + 1) % len(self.nodes)]

    def sibling(self, ref: NodeRef, kind: Kind) -> NodeRef:
        return self._by_identity[(ref.process_id, kind)]

    def node(self, process_id: int, kind: Kind) -> NodeRef:
        return self._by_identity[(process_id, kind)]

    def owner(self, point: int) -> NodeRef:
        """Predecessor of `point` on the cycle, found by bisection."""
        i = bisect_right(self.labels, point) - 1
        return self.nodes[i]  # -1 wraps to the maximum-label node

    class _View:
        __slots__ = ("ring", "ref")

        def __init__(self, ring, ref):
            self.ring = ring
            self.ref = ref

        @property
        def kind(self):
            return self.ref.kind

        @property
        def label(self):
            return self.ref.label

        def pred_ref(self):
            return self.ring.pred(self.ref)

        def succ_ref(self):
            return self.ring.succ(self.ref)

        def sibling_ref(self, kind):
            return self.ring.sibling(self.ref, kind)

    def route(self, src: NodeRef, target: int, max_hops: int = 100000) -> tuple[NodeRef, int]:
        """Walk a route hop by hop; returns (terminal node, hop count)."""
        state = make_route(target, self.n_processes)
        cur = src
        hops = 0
        while True:
            step = route_next(self._View(self, cur), state)
            if step is None:
                return cur, hops
            cur, state = step
            hops += 1
            if hops > max_hops:
                raise RuntimeError("route did not terminate")
