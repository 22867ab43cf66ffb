"""Protocol message payloads.

Messages tagged `data_plane` carry DHT traffic; the adversarial scheduler's
delay script applies to exactly these.  Everything else is control traffic
(batches, intervals, membership coordination) delivered with unit delay under
the adversary and policy-chosen delay otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from distqueue.batch import Batch, ReqKey
from distqueue.topology import Kind, NodeRef, RouteState


# -- queue pipeline ----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Aggregate:
    """A child's flushed batch travelling one level up the tree."""
    batch: Batch
    sender: NodeRef


@dataclass(frozen=True, slots=True)
class QueueBundle:
    """Per-run inclusive position intervals, empty runs encoded x = y + 1."""
    intervals: tuple[tuple[int, int], ...]


@dataclass(frozen=True, slots=True)
class StackBundle:
    pop_interval: tuple[int, int]     # positions consumed from the top down
    pop_bound: int                    # ticket bound for every pop in the run
    push_interval: tuple[int, int]
    push_ticket_start: int


@dataclass(frozen=True, slots=True)
class Serve:
    """Decomposed intervals for the sub-batch a child contributed."""
    bundle: QueueBundle | StackBundle
    update_flag: bool = False


# -- DHT traffic --------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Put:
    data_plane = True
    position: int
    key: int
    element: object
    requester: ReqKey
    ticket: int | None = None
    origin_uid: int | None = None     # set when the emitter wants a stored ack


@dataclass(frozen=True, slots=True)
class Get:
    data_plane = True
    position: int
    key: int
    initiator_uid: int
    requester: ReqKey
    bound: int | None = None          # stack: remove largest ticket <= bound


@dataclass(frozen=True, slots=True)
class GetReply:
    data_plane = True
    requester: ReqKey
    position: int
    element: object


@dataclass(frozen=True, slots=True)
class PutStored:
    data_plane = True
    requester: ReqKey
    position: int


@dataclass(frozen=True, slots=True)
class Routed:
    """A payload travelling hop by hop toward the owner of a label point."""
    state: RouteState
    inner: object
    data_plane: bool = False


@dataclass(frozen=True, slots=True)
class Direct:
    """Terminal delivery of a DHT payload to a known responsible node."""
    inner: object
    data_plane: bool = True


# -- membership ----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class JoinRequest:
    joiner: NodeRef


@dataclass(frozen=True, slots=True)
class Adopt:
    """Responsible node introduces itself and hands over the ward's interval."""
    responsible: NodeRef
    items: tuple = ()
    parked: tuple = ()
    paused: bool = False


@dataclass(frozen=True, slots=True)
class WardDataTransfer:
    """Ask an existing ward to hand its tail interval to a newer ward."""
    new_ward: NodeRef


@dataclass(frozen=True, slots=True)
class DataHandover:
    items: tuple = ()
    parked: tuple = ()


@dataclass(frozen=True, slots=True)
class IntegrateNeighbors:
    pred: NodeRef
    succ: NodeRef


@dataclass(frozen=True, slots=True)
class RepointPred:
    new: NodeRef
    old_uid: int


@dataclass(frozen=True, slots=True)
class RepointSucc:
    new: NodeRef
    old_uid: int


@dataclass(frozen=True, slots=True)
class SiblingUpdate:
    kind: Kind
    new: NodeRef
    old_uid: int


@dataclass(frozen=True, slots=True)
class ResponsibleChanged:
    new: NodeRef


@dataclass(frozen=True, slots=True)
class UpdateAck:
    sender_uid: int


@dataclass(frozen=True, slots=True)
class PhaseEnd:
    pass


@dataclass(frozen=True, slots=True)
class AnchorSnapshot:
    first: int
    last: int
    counter: int
    ticket: int
    pending_joins: int
    pending_leaves: int
    phase: int
    update_active: bool


@dataclass(frozen=True, slots=True)
class AnchorMigrate:
    snapshot: AnchorSnapshot
    walk: bool                 # False: install at the recipient directly
    sender: NodeRef


# -- leave protocol ----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class LeaveAsk:
    asker: NodeRef


@dataclass(frozen=True, slots=True)
class LeaveReply:
    granted: bool


@dataclass(frozen=True, slots=True)
class SpawnRequest:
    """Full state snapshot of the leaver, shipped to its grantor predecessor."""
    leaver: NodeRef
    state: dict = field(compare=False)


@dataclass(frozen=True, slots=True)
class ReplacementUp:
    replacement: NodeRef


@dataclass(frozen=True, slots=True)
class DrainCheck:
    leaver_uid: int
    replacement: NodeRef


@dataclass(frozen=True, slots=True)
class DrainConfirm:
    leaver_uid: int
    confirmer_uid: int


@dataclass(frozen=True, slots=True)
class OwnReplacement:
    ref: NodeRef
    holds_anchor: bool


@dataclass(frozen=True, slots=True)
class ReadyToDissolve:
    ref: NodeRef


@dataclass(frozen=True, slots=True)
class Dissolve:
    pass


@dataclass(frozen=True, slots=True)
class DissolveData:
    """A dissolving replacement's store, duties and edges, handed to its pred."""
    items: tuple = ()
    parked: tuple = ()
    wards: tuple = ()
    handoffs: tuple = ()
    new_succ: NodeRef | None = None
    dissolved_uid: int = -1


@dataclass(frozen=True, slots=True)
class Dissolved:
    uid: int
