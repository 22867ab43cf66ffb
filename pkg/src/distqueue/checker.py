"""Sequential-consistency checking of recorded runs.

The checker rebuilds the protocol's own total order: every batched request
carries the value the anchor computed for it (its offset inside the combined
run, plus the run prefix, plus the phase counter), and locally combined
stack pairs slot in directly after their process's previous batched request,
where they commute with everything.  `verify` then mechanically checks the
four defining properties of a sequentially consistent queue (or the LIFO
analogues) against the matching extracted from the results.  For small
traces `brute_force_exists` searches all interleavings that respect
per-process issue order for any order satisfying the same four properties,
written against the definition rather than the protocol's construction.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from distqueue.batch import ReqKey
from distqueue.recorder import Recorder, RequestRecord

QUEUE_KINDS = ("Enq", "Deq")
STACK_KINDS = ("Push", "Pop")


class CheckerError(RuntimeError):
    """Lineage metadata is incomplete; no verdict can be given."""


@dataclass(frozen=True, slots=True)
class ValuedRequest:
    key: ReqKey
    kind: str
    order_key: tuple
    value: int | None
    position: int | None
    element: object
    result: object
    local_seq: int
    process: int


@dataclass(frozen=True, slots=True)
class Verdict:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def data_records(rec: Recorder) -> list[RequestRecord]:
    kinds = QUEUE_KINDS + STACK_KINDS
    return [r for r in rec.requests.values() if r.kind in kinds]


def assign_values(rec: Recorder) -> list[ValuedRequest]:
    """The protocol-constructed total order, smallest first."""
    records = data_records(rec)
    by_process: dict[int, list[RequestRecord]] = {}
    for r in records:
        by_process.setdefault(r.process, []).append(r)
    out = []
    for process, rs in by_process.items():
        rs.sort(key=lambda r: r.local_seq)
        prev_value = 0
        for r in rs:
            if not r.completed:
                raise CheckerError(f"request {r.key} never completed")
            if r.value is not None:
                prev_value = r.value
                order_key = (r.value, 1, 0, 0)
            elif r.local_pair is not None:
                order_key = (prev_value, 2, process, r.local_seq)
            else:
                raise CheckerError(f"request {r.key} has no value or pair")
            out.append(ValuedRequest(r.key, r.kind, order_key, r.value,
                                     r.position, r.element, r.result,
                                     r.local_seq, process))
    out.sort(key=lambda v: v.order_key)
    values = [v.value for v in out if v.value is not None]
    if len(set(values)) != len(values):
        raise CheckerError("anchor values are not unique")
    return out


def extract_matching(order: list[ValuedRequest]) -> dict[ReqKey, ReqKey]:
    """removal -> insertion pairs, keyed by the element that travelled."""
    by_element = {}
    for v in order:
        if v.kind in ("Enq", "Push"):
            assert v.element not in by_element, "element inserted twice"
            by_element[v.element] = v
    matching: dict[ReqKey, ReqKey] = {}
    claimed: set[ReqKey] = set()
    for v in order:
        if v.kind in ("Deq", "Pop") and v.result is not None:
            ins = by_element.get(v.result)
            if ins is None:
                raise CheckerError(f"{v.key} returned unknown element {v.result}")
            assert ins.key not in claimed, "element delivered twice"
            claimed.add(ins.key)
            matching[v.key] = ins.key
    return matching


def verify(order: list[ValuedRequest], matching: dict[ReqKey, ReqKey],
           stack: bool) -> Verdict:
    """Check the four sequential-consistency properties on a total order."""
    pair_of: dict[ReqKey, int] = {}
    for i, (rem, ins) in enumerate(sorted(matching.items())):
        pair_of[rem] = i
        pair_of[ins] = i

    # property 4: per-process issue order embeds in the total order
    last_seen: dict[int, ValuedRequest] = {}
    for rank, v in enumerate(order):
        prev = last_seen.get(v.process)
        if prev is not None and prev.local_seq > v.local_seq:
            return Verdict(False, f"program order broken at {v.key}")
        last_seen[v.process] = v

    open_pairs: list[int] = []
    enq_of_open: dict[int, ValuedRequest] = {}
    matched_inserts_left = sum(1 for v in order
                               if v.kind in ("Enq", "Push") and v.key in pair_of)
    for v in order:
        if v.kind in ("Enq", "Push"):
            if v.key in pair_of:
                open_pairs.append(pair_of[v.key])
                enq_of_open[pair_of[v.key]] = v
                matched_inserts_left -= 1
            else:
                if stack and open_pairs:
                    return Verdict(False,
                                   f"unmatched {v.key} inside a matched pair")
                if not stack and matched_inserts_left > 0:
                    return Verdict(False,
                                   f"unmatched {v.key} precedes a matched insert")
        else:
            if v.key in pair_of:
                pid = pair_of[v.key]
                if pid not in enq_of_open:
                    return Verdict(False,
                                   f"{v.key} removes an element not yet inserted")
                expected = open_pairs[-1] if stack else open_pairs[0]
                if expected != pid:
                    kind = "LIFO" if stack else "FIFO"
                    return Verdict(False, f"{kind} order broken at {v.key}")
                open_pairs.remove(pid)
                del enq_of_open[pid]
            else:
                if open_pairs:
                    return Verdict(False,
                                   f"empty removal {v.key} inside a matched pair")
    return Verdict(True)


def check_run(rec: Recorder, stack: bool) -> Verdict:
    order = assign_values(rec)
    matching = extract_matching(order)
    _metadata_sanity(rec, order, matching, stack)
    return verify(order, matching, stack)


def _metadata_sanity(rec, order, matching, stack) -> None:
    by_key = {v.key: v for v in order}
    for rem, ins in matching.items():
        r, i = by_key[rem], by_key[ins]
        if r.position is not None or i.position is not None:
            assert r.position == i.position, \
                f"matched pair {rem}/{ins} disagree on position"
        if stack and r.position is not None:
            rr, ri = rec.requests[rem], rec.requests[ins]
            if rr.bound is not None and ri.ticket is not None:
                assert ri.ticket <= rr.bound, "pop bound below its push ticket"


# -- brute-force existence oracle ---------------------------------------------------

def brute_force_exists(records: list[RequestRecord], stack: bool) -> bool:
    """Does any issue-order-respecting total order satisfy the definition?

    Independent of the anchor-value construction: a memoized DFS over
    per-process frontiers, tracking only the currently open matched pairs.
    Traces beyond a few dozen requests are refused.
    """
    assert len(records) <= 24, "brute force oracle is for small traces only"
    seqs: dict[int, list[RequestRecord]] = {}
    for r in records:
        seqs.setdefault(r.process, []).append(r)
    for rs in seqs.values():
        rs.sort(key=lambda r: r.local_seq)
    procs = sorted(seqs)
    element_to_pair: dict = {}
    pair_count = 0
    pair_of: dict[ReqKey, int] = {}
    for r in records:
        if r.kind in ("Deq", "Pop") and r.result is not None:
            element_to_pair[r.result] = pair_count
            pair_of[r.key] = pair_count
            pair_count += 1
    for r in records:
        if r.kind in ("Enq", "Push") and r.element in element_to_pair:
            pair_of[r.key] = element_to_pair[r.element]
    matched_inserts = {r.key for r in records
                       if r.kind in ("Enq", "Push") and r.key in pair_of}

    seen: set[tuple] = set()

    def dfs(indices: tuple[int, ...], opened: tuple[int, ...],
            inserts_left: int) -> bool:
        if all(indices[i] == len(seqs[p]) for i, p in enumerate(procs)):
            return True
        state = (indices, opened)
        if state in seen:
            return False
        seen.add(state)
        for i, p in enumerate(procs):
            if indices[i] == len(seqs[p]):
                continue
            r = seqs[p][indices[i]]
            nxt = indices[:i] + (indices[i] + 1,) + indices[i + 1:]
            if r.kind in ("Enq", "Push"):
                if r.key in pair_of:
                    if dfs(nxt, opened + (pair_of[r.key],), inserts_left - 1):
                        return True
                else:
                    if stack and opened:
                        continue
                    if not stack and inserts_left > 0:
                        continue
                    if dfs(nxt, opened, inserts_left):
                        return True
            else:
                if r.key in pair_of:
                    pid = pair_of[r.key]
                    if not opened:
                        continue
                    expected = opened[-1] if stack else opened[0]
                    if expected != pid:
                        continue
                    rest = opened[:-1] if stack else opened[1:]
                    if dfs(nxt, rest, inserts_left):
                        return True
                else:
                    if opened:
                        continue
                    if dfs(nxt, opened, inserts_left):
                        return True
        return False

    return dfs(tuple(0 for _ in procs), (), len(matched_inserts))


# -- lemma suite (queue runs) ----------------------------------------------------------

def lemma_violations(rec: Recorder) -> list[str]:
    """Trace predicates for the position/value ordering facts of queue runs."""
    out: list[str] = []
    records = [r for r in data_records(rec) if r.kind in QUEUE_KINDS]
    valued = sorted((r for r in records if r.value is not None),
                    key=lambda r: r.value)

    posd = [r for r in valued if r.kind == "Deq" and r.position is not None]
    for a, b in zip(posd, posd[1:]):
        if not a.position < b.position:
            out.append(f"L3: dequeues {a.key},{b.key} break position order")
    pose = [r for r in valued if r.kind == "Enq"]
    for a, b in zip(pose, pose[1:]):
        if not a.position < b.position:
            out.append(f"L4: enqueues {a.key},{b.key} break position order")

    max_deq_pos = -1
    for r in valued:
        if r.kind == "Deq" and r.position is not None:
            max_deq_pos = max(max_deq_pos, r.position)
        elif r.kind == "Enq" and r.position <= max_deq_pos:
            out.append(f"L5: enqueue {r.key} at or below an earlier dequeue")
    min_enq_after = None
    for r in reversed(valued):
        if r.kind == "Enq":
            if min_enq_after is None or r.position < min_enq_after:
                min_enq_after = r.position
        elif r.kind == "Deq" and r.position is not None:
            if min_enq_after is not None and min_enq_after <= r.position:
                out.append(f"L5: dequeue {r.key} above a later enqueue")

    runs: dict[tuple, list[RequestRecord]] = {}
    for r in valued:
        if r.kind == "Deq":
            runs.setdefault((r.anchor_phase, r.run_index), []).append(r)
    for (phase, run), rs in sorted(runs.items()):
        rs.sort(key=lambda r: r.run_offset)
        seen_bottom = False
        for r in rs:
            if r.position is None:
                seen_bottom = True
            elif seen_bottom:
                out.append(f"L6: positioned dequeue {r.key} after a bottom")
                break
        if seen_bottom:
            first, last = rec.anchor_runs[(phase, run)]
            if first <= last:
                out.append(f"L6: run {phase}/{run} returned bottom "
                           f"with a non-empty interval")

    bottom_values = sorted(r.value for r in valued
                           if r.kind == "Deq" and r.position is None)
    enq_value = {r.key: r.value for r in valued if r.kind == "Enq"}
    enq_by_element = {r.element: r for r in valued if r.kind == "Enq"}
    for r in valued:
        if r.kind == "Deq" and r.result is not None:
            ins = enq_by_element.get(r.result)
            if ins is None:
                continue
            lo = bisect.bisect_right(bottom_values, ins.value)
            hi = bisect.bisect_left(bottom_values, r.value)
            if hi > lo:
                out.append(f"C3: {r.key} returned an element enqueued "
                           f"before an intervening bottom")

    deq_positions = {r.position for r in posd}
    enq_positions = sorted(r.position for r in pose)
    for r in posd:
        idx = bisect.bisect_left(enq_positions, r.position)
        for p in enq_positions[:idx]:
            if p not in deq_positions:
                out.append(f"L7: position {p} below dequeue {r.key} "
                           f"was never dequeued")
    return out
