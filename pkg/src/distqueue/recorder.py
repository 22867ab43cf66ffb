"""Run instrumentation: the event log and per-request protocol metadata.

The recorder carries two views of a run.  The event log is the line-oriented
trace (one tab-separated record per event) that the harness can write out and
replay-compare.  The request table is the structured metadata the
consistency checker consumes: for every request its lineage through the
batch pipeline, the value the anchor assigned, the position it received and
the element it returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from distqueue.batch import ReqKey

BOT = "⊥"  # printed for dequeues that returned bottom


@dataclass(slots=True)
class RequestRecord:
    process: int
    op_index: int
    kind: str                    # Enq | Deq | Push | Pop | Join | Leave
    element: object = None       # element id carried by Enq/Push
    issue_step: int = -1
    complete_step: int = -1
    result: object = None        # element id, or None for bottom / n.a.
    value: int | None = None     # anchor-assigned value, None for local pairs
    position: int | None = None
    ticket: int | None = None
    bound: int | None = None
    anchor_phase: int | None = None
    run_index: int | None = None
    run_offset: int | None = None
    local_pair: ReqKey | None = None   # stack: locally combined partner
    local_seq: int | None = None       # issue counter at the owning process

    @property
    def key(self) -> ReqKey:
        return (self.process, self.op_index)

    @property
    def completed(self) -> bool:
        return self.complete_step >= 0


class Recorder:
    """Collects trace events and request metadata for one run."""

    def __init__(self, log_messages: bool = False):
        self.log_messages = log_messages
        self.events: list[tuple] = []
        self.requests: dict[ReqKey, RequestRecord] = {}
        self.anchor_runs: dict[tuple[int, int], tuple[int, int]] = {}
        self.batch_lengths: list[int] = []
        self.update_phases: list[list[int]] = []
        self.anchor_phase_steps: list[int] = []
        self._local_seq: dict[int, int] = {}

    # -- request lifecycle ------------------------------------------------

    def request_issued(self, step: int, process: int, op_index: int,
                       kind: str, element=None) -> RequestRecord:
        seq = self._local_seq.get(process, 0)
        self._local_seq[process] = seq + 1
        rec = RequestRecord(process, op_index, kind, element=element,
                            issue_step=step, local_seq=seq)
        assert rec.key not in self.requests, "op_index reused"
        self.requests[rec.key] = rec
        self._event(step, "RequestIssued", process, kind, op_index, element, None)
        return rec

    def request_completed(self, step: int, req: ReqKey, result=None) -> None:
        rec = self.requests[req]
        assert not rec.completed, f"request {req} completed twice"
        rec.complete_step = step
        rec.result = result
        self._event(step, "RequestCompleted", rec.process, rec.kind,
                    rec.op_index, rec.element, result if result is not None else BOT)

    def value_assigned(self, req: ReqKey, value: int, phase: int,
                       run: int, offset: int) -> None:
        rec = self.requests[req]
        assert rec.value is None, f"value for {req} assigned twice"
        rec.value = value
        rec.anchor_phase = phase
        rec.run_index = run
        rec.run_offset = offset

    def position_assigned(self, req: ReqKey, position: int | None,
                          ticket: int | None = None,
                          bound: int | None = None) -> None:
        rec = self.requests[req]
        rec.position = position
        rec.ticket = ticket
        rec.bound = bound

    def locally_combined(self, step: int, push: ReqKey, pop: ReqKey) -> None:
        self.requests[push].local_pair = pop
        self.requests[pop].local_pair = push

    # -- anchor bookkeeping ------------------------------------------------

    def anchor_run_state(self, phase: int, run: int, first: int, last: int) -> None:
        self.anchor_runs[(phase, run)] = (first, last)

    def anchor_phase(self, step: int) -> None:
        self.anchor_phase_steps.append(step)

    def batch_sent(self, length: int) -> None:
        self.batch_lengths.append(length)

    def update_phase_started(self, step: int, process: int) -> None:
        self.update_phases.append([step, -1])
        self._event(step, "PhaseChange", process, "", len(self.update_phases),
                    "update-begin", None)

    def update_phase_ended(self, step: int, process: int) -> None:
        self.update_phases[-1][1] = step
        self._event(step, "PhaseChange", process, "", len(self.update_phases),
                    "update-end", None)

    # -- message traffic (optional) -----------------------------------------

    def message_sent(self, step: int, src: int, dst: int, kind: str, msg_id: int) -> None:
        if self.log_messages:
            self._event(step, "MessageSent", src, kind, msg_id, dst, None)

    def message_delivered(self, step: int, src: int, dst: int, kind: str, msg_id: int) -> None:
        if self.log_messages:
            self._event(step, "MessageDelivered", dst, kind, msg_id, src, None)

    # -- output --------------------------------------------------------------

    def _event(self, step, kind, process, op_kind, op_index, element, result):
        self.events.append((step, kind, process, op_kind, op_index, element, result))

    @staticmethod
    def _cell(v) -> str:
        if v is None:
            return ""
        if isinstance(v, tuple):
            return f"{v[0]}:{v[1]}"
        return str(v)

    def trace_lines(self) -> list[str]:
        return ["\t".join(self._cell(c) for c in ev) for ev in self.events]

    def trace_text(self) -> str:
        return "\n".join(self.trace_lines()) + "\n"

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.trace_text())

    # -- stats helpers --------------------------------------------------------

    def max_batch_length(self) -> int:
        return max(self.batch_lengths, default=0)

    def max_update_phase_rounds(self) -> int:
        spans = [e - s for s, e in self.update_phases if e >= 0]
        return max(spans, default=0)

    def latencies(self) -> list[int]:
        return [r.complete_step - r.issue_step
                for r in self.requests.values()
                if r.completed and r.kind not in ("Join", "Leave")]
