"""Deterministic graph orderings for block DAGs."""

from __future__ import annotations

import heapq

from .model import INPUT_NODE, OUTPUT_NODE, Block


class CycleError(ValueError):
    """The block graph contains a cycle; ``members`` names the nodes on it."""

    def __init__(self, members: list[str]):
        self.members = members
        super().__init__(f"graph cycle through {members}")


def topo_sort(block: Block) -> list[str]:
    """Topological order of a block graph.

    Input comes first and Output last; ties are broken by node declaration
    order so the result is a pure function of the block value.
    """
    order_key = {INPUT_NODE: -1, OUTPUT_NODE: len(block.nodes)}
    for i, node in enumerate(block.nodes):
        order_key[node.node_id] = i

    indegree = {name: 0 for name in order_key}
    successors: dict[str, list[str]] = {name: [] for name in order_key}
    for edge in block.edges:
        successors[edge.src[0]].append(edge.dst[0])
        indegree[edge.dst[0]] += 1

    ready = [(order_key[name], name) for name, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    result: list[str] = []
    while ready:
        _, name = heapq.heappop(ready)
        result.append(name)
        for succ in successors[name]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, (order_key[succ], succ))

    if len(result) != len(order_key):
        stuck = sorted((n for n, d in indegree.items() if d > 0), key=order_key.__getitem__)
        raise CycleError(stuck)
    return result


def cycles(block: Block) -> list[list[str]]:
    """Strongly connected components with a cycle, in declaration order."""
    order_key = {INPUT_NODE: -1, OUTPUT_NODE: len(block.nodes)}
    for i, node in enumerate(block.nodes):
        order_key[node.node_id] = i
    successors: dict[str, set[str]] = {name: set() for name in order_key}
    self_loops = set()
    for edge in block.edges:
        if edge.src[0] == edge.dst[0]:
            self_loops.add(edge.src[0])
        successors[edge.src[0]].add(edge.dst[0])

    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    counter = [0]
    found: list[list[str]] = []

    def strongconnect(v: str) -> None:
        # Iterative Tarjan keeps big editor graphs from hitting recursion limits.
        work = [(v, iter(sorted(successors[v], key=order_key.__getitem__)))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for succ in it:
                if succ not in index:
                    index[succ] = low[succ] = counter[0]
                    counter[0] += 1
                    stack.append(succ)
                    on_stack.add(succ)
                    work.append((succ, iter(sorted(successors[succ], key=order_key.__getitem__))))
                    advanced = True
                    break
                if succ in on_stack:
                    low[node] = min(low[node], index[succ])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1 or node in self_loops:
                    found.append(sorted(component, key=order_key.__getitem__))

    for name in sorted(order_key, key=order_key.__getitem__):
        if name not in index:
            strongconnect(name)
    found.sort(key=lambda comp: order_key[comp[0]])
    return found
