"""Distributed queue/stack protocol engine with a deterministic network simulator.

The package simulates a sequentially consistent distributed FIFO queue (and a
LIFO stack variant) built from three cooperating mechanisms:

* a sorted label cycle in which every process emulates three virtual nodes
  (left / middle / right), giving De Bruijn style shortcut edges,
* an implicit aggregation tree over that cycle which funnels run-length
  encoded request batches to the minimum-label node (the anchor) and fans
  position intervals back out, and
* a consistent-hashing DHT that stores queue elements keyed by hashed
  positions.

`sim` builds and drives whole networks, `harness` runs experiments, and
`checker` verifies every recorded run against the sequential-consistency
definition.
"""

from distqueue.topology import Kind, label_of
from distqueue.batch import Batch, combine
from distqueue.kernel import Kernel, SchedulerMode, SchedulerPolicy
from distqueue.sim import Simulation, SimConfig

__all__ = [
    "Kind",
    "label_of",
    "Batch",
    "combine",
    "Kernel",
    "SchedulerMode",
    "SchedulerPolicy",
    "Simulation",
    "SimConfig",
]
