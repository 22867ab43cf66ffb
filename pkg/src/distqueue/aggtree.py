"""Aggregation-tree links derived from purely local neighbor information.

Every virtual node's parent is its leftmost neighbor: a middle node's parent
is its left sibling, a left node's parent is its cycle predecessor, and a
right node's parent is its middle sibling.  Children mirror those rules; a
node adopts its successor as a child exactly when that successor is a left
node, so right nodes are always leaves.  The minimum-label node has no parent
and acts as the root (the anchor).
"""

from __future__ import annotations

from distqueue.topology import Kind, NodeRef


def parent_of(me: NodeRef, pred: NodeRef, sibling_of) -> NodeRef | None:
    """Parent link of a node, or None for the anchor.

    `sibling_of(kind)` resolves the node's own process siblings.  A left node
    whose predecessor has a larger order key sits at the cycle wrap, which
    identifies the minimum-label node.
    """
    if me.kind is Kind.MIDDLE:
        return sibling_of(Kind.LEFT)
    if me.kind is Kind.RIGHT:
        return sibling_of(Kind.MIDDLE)
    if pred.order_key() > me.order_key():
        return None
    return pred


def children_of(me: NodeRef, succ: NodeRef, sibling_of) -> list[NodeRef]:
    """Ordered child list: successor child first, then the sibling child.

    The fixed order keeps sub-batch bookkeeping deterministic when intervals
    are split back out.
    """
    if me.kind is Kind.RIGHT:
        return []
    out: list[NodeRef] = []
    if succ.kind is Kind.LEFT and succ.order_key() > me.order_key():
        out.append(succ)
    out.append(sibling_of(Kind.RIGHT if me.kind is Kind.MIDDLE else Kind.MIDDLE))
    return out
