"""Computational graphs of networks and their main-memory requirement.

Graph files are JSON::

    {"name": "...", "word_bits": 4,
     "nodes": [{"id": "n001_conv1", "kind": "conv", "activation": "relu",
                "conv": {"in_h": 224, "in_w": 224, "in_c": 3, "out_c": 64,
                         "kernel": [7, 7], "stride": 2, "padding": 3}}, ...],
     "edges": [{"src": "n000_input", "dst": "n001_conv1", "words": 150528}, ...]}

Edges carry ``words`` (activations) or ``bytes``.  All out-edges of a node
carry the same output tensor, which is stored once in main memory.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import GraphFormatError

KINDS = {"conv", "fc", "recurrent", "maxpool", "eltwise-add", "eltwise-mul", "concat", "input", "output"}
WEIGHTED = {"conv", "fc", "recurrent"}
ACTIVATIONS = {"linear", "relu", "tanh", "sigmoid"}


@dataclass(frozen=True)
class ConvGeometry:
    in_h: int
    in_w: int
    in_c: int
    out_c: int
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.padding - self.kernel[0]) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.padding - self.kernel[1]) // self.stride + 1

    @property
    def window_words(self) -> int:
        return self.kernel[0] * self.kernel[1] * self.in_c

    @property
    def in_words(self) -> int:
        return self.in_h * self.in_w * self.in_c

    @property
    def out_words(self) -> int:
        return self.out_h * self.out_w * self.out_c


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    activation: str = "linear"
    inputs: int = 0  # kernel rows
    outputs: int = 0  # kernel columns
    conv: ConvGeometry | None = None
    hidden: int = 0
    gates: int = 4
    seq_len: int = 1
    elements: int = 0  # AUX element count (pool output, eltwise size)
    fused_add: bool = False

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED

    @property
    def weights(self) -> int:
        return self.inputs * self.outputs if self.weighted else 0

    @property
    def macs(self) -> int:
        """Multiply-accumulates of one inference (padding excluded)."""
        if self.kind == "fc":
            return self.inputs * self.outputs
        if self.kind == "conv":
            return self.inputs * self.outputs * self.conv.out_h * self.conv.out_w
        if self.kind == "recurrent":
            return self.inputs * self.outputs * self.seq_len
        return 0


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    bytes: int


@dataclass
class NetworkGraph:
    name: str
    word_bits: int
    nodes: dict  # id -> Node, insertion ordered
    edges: list
    _succ: dict = field(default_factory=dict, repr=False)
    _pred: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._succ = {n: [] for n in self.nodes}
        self._pred = {n: [] for n in self.nodes}
        for e in self.edges:
            self._succ[e.src].append(e)
            self._pred[e.dst].append(e)

    def out_edges(self, node_id: str) -> list:
        return self._succ[node_id]

    def in_edges(self, node_id: str) -> list:
        return self._pred[node_id]

    def output_bytes(self, node_id: str) -> int:
        """Size of the node's output tensor in main memory."""
        return max((e.bytes for e in self._succ[node_id]), default=0)

    def words_to_bytes(self, words: int) -> int:
        return math.ceil(words * self.word_bits / 8)

    @property
    def weighted_nodes(self) -> list:
        return [n for n in self.nodes.values() if n.weighted]

    @property
    def total_weights(self) -> int:
        return sum(n.weights for n in self.nodes.values())

    @property
    def total_macs(self) -> int:
        return sum(n.macs for n in self.nodes.values())

    def without_edge(self, index: int) -> "NetworkGraph":
        edges = self.edges[:index] + self.edges[index + 1 :]
        return NetworkGraph(self.name, self.word_bits, dict(self.nodes), edges)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes.values():
            d = {"id": n.id, "kind": n.kind}
            if n.activation != "linear":
                d["activation"] = n.activation
            if n.conv is not None:
                c = n.conv
                d["conv"] = {
                    "in_h": c.in_h, "in_w": c.in_w, "in_c": c.in_c, "out_c": c.out_c,
                    "kernel": list(c.kernel), "stride": c.stride, "padding": c.padding,
                }
            elif n.kind == "recurrent":
                d.update(inputs=n.inputs - n.hidden, hidden=n.hidden, gates=n.gates, seq_len=n.seq_len)
            elif n.kind == "fc":
                d.update(inputs=n.inputs, outputs=n.outputs)
                if n.seq_len != 1:
                    d["seq_len"] = n.seq_len
            if n.elements:
                d["elements"] = n.elements
            if n.fused_add:
                d["fused_add"] = True
            nodes.append(d)
        edges = [{"src": e.src, "dst": e.dst, "bytes": e.bytes} for e in self.edges]
        return {"name": self.name, "word_bits": self.word_bits, "nodes": nodes, "edges": edges}


def _node_from_dict(d: dict) -> Node:
    try:
        nid = str(d["id"])
        kind = d["kind"]
    except KeyError as exc:
        raise GraphFormatError(f"node without {exc}") from None
    if kind not in KINDS:
        raise GraphFormatError(f"node {nid}: unknown kind {kind!r}")
    act = d.get("activation", "linear")
    if act not in ACTIVATIONS:
        raise GraphFormatError(f"node {nid}: unknown activation {act!r}")
    conv = None
    if "conv" in d:
        c = d["conv"]
        try:
            kernel = c.get("kernel", [1, 1])
            if isinstance(kernel, int):
                kernel = [kernel, kernel]
            conv = ConvGeometry(
                int(c["in_h"]), int(c["in_w"]), int(c["in_c"]), int(c.get("out_c", c["in_c"])),
                (int(kernel[0]), int(kernel[1])), int(c.get("stride", 1)), int(c.get("padding", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"node {nid}: bad conv geometry ({exc})") from None
        if min(conv.in_h, conv.in_w, conv.in_c, conv.out_c, conv.stride, *conv.kernel) < 1 or conv.out_h < 1 or conv.out_w < 1:
            raise GraphFormatError(f"node {nid}: degenerate conv geometry")
    kw = dict(id=nid, kind=kind, activation=act, conv=conv,
              seq_len=int(d.get("seq_len", 1)), elements=int(d.get("elements", 0)),
              fused_add=bool(d.get("fused_add", False)))
    if kind == "conv":
        if conv is None:
            raise GraphFormatError(f"node {nid}: conv node needs geometry")
        kw.update(inputs=conv.window_words, outputs=conv.out_c)
    elif kind == "fc":
        kw.update(inputs=int(d.get("inputs", 0)), outputs=int(d.get("outputs", 0)))
    elif kind == "recurrent":
        hidden = int(d.get("hidden", 0))
        gates = int(d.get("gates", 4))
        kw.update(inputs=int(d.get("inputs", 0)) + hidden, outputs=gates * hidden, hidden=hidden, gates=gates)
        if hidden < 1:
            raise GraphFormatError(f"node {nid}: recurrent node needs hidden >= 1")
    elif kind == "maxpool" and conv is not None and not kw["elements"]:
        kw["elements"] = conv.out_words
    node = Node(**kw)
    if node.weighted and (node.inputs < 1 or node.outputs < 1):
        raise GraphFormatError(f"node {nid}: weighted node needs positive kernel dimensions")
    if node.seq_len < 1:
        raise GraphFormatError(f"node {nid}: seq_len must be >= 1")
    return node


def graph_from_dict(data: dict) -> NetworkGraph:
    if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
        raise GraphFormatError("graph needs 'nodes' and 'edges'")
    word_bits = int(data.get("word_bits", 4))
    if word_bits < 1:
        raise GraphFormatError("word_bits must be >= 1")
    nodes = {}
    for nd in data["nodes"]:
        node = _node_from_dict(nd)
        if node.id in nodes:
            raise GraphFormatError(f"duplicate node id {node.id}")
        nodes[node.id] = node
    edges = []
    for ed in data["edges"]:
        try:
            src, dst = str(ed["src"]), str(ed["dst"])
        except (KeyError, TypeError):
            raise GraphFormatError(f"edge without src/dst: {ed}") from None
        for end in (src, dst):
            if end not in nodes:
                raise GraphFormatError(f"dangling edge {src} -> {dst}: unknown node {end}")
        if "bytes" in ed:
            nbytes = int(ed["bytes"])
        elif "words" in ed:
            nbytes = math.ceil(int(ed["words"]) * word_bits / 8)
        else:
            raise GraphFormatError(f"edge {src} -> {dst} has no size")
        if nbytes <= 0:
            raise GraphFormatError(f"edge {src} -> {dst} must carry a positive byte count")
        edges.append(Edge(src, dst, nbytes))
    g = NetworkGraph(str(data.get("name", "graph")), word_bits, nodes, edges)
    processing_order(g)  # raises on cycles
    _check_connectivity(g)
    return g


def _check_connectivity(g: NetworkGraph):
    if len(g.nodes) <= 1:
        return
    sources = [n for n in g.nodes if not g.in_edges(n)]
    sinks = [n for n in g.nodes if not g.out_edges(n)]
    for n in sources:
        if g.nodes[n].kind != "input":
            raise GraphFormatError(f"node {n} has no inputs but is not an input node")
    for n in sinks:
        if g.nodes[n].kind != "output":
            raise GraphFormatError(f"node {n} has no consumers but is not an output node")


def load_graph(path: str | Path) -> NetworkGraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON ({exc})") from None
    return graph_from_dict(data)


def processing_order(g: NetworkGraph) -> list:
    """Topological order, smallest ready node id first."""
    indeg = {n: 0 for n in g.nodes}
    for e in g.edges:
        indeg[e.dst] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for e in g.out_edges(n):
            indeg[e.dst] -= 1
            if indeg[e.dst] == 0:
                heapq.heappush(ready, e.dst)
    if len(order) != len(g.nodes):
        stuck = sorted(n for n, d in indeg.items() if d > 0)
        raise GraphFormatError(f"graph has a cycle through {stuck[:5]}")
    return order


@dataclass(frozen=True)
class MemoryProfile:
    order: tuple
    live_bytes: tuple

    @property
    def peak_bytes(self) -> int:
        return max(self.live_bytes, default=0)

    @property
    def peak_step(self) -> int | None:
        return self.live_bytes.index(self.peak_bytes) if self.live_bytes else None


def memory_profile(g: NetworkGraph, order: Sequence[str]) -> MemoryProfile:
    """Main-memory bytes live while each node is processed.

    A node's output tensor is live from the step that produces it through the
    step of its last consumer: the cut of already-processed producers with
    pending consumers, plus the output of the node being processed.
    """
    pos = {n: i for i, n in enumerate(order)}
    if len(pos) != len(g.nodes) or set(pos) != set(g.nodes):
        raise GraphFormatError("order must list every node exactly once")
    for e in g.edges:
        if pos[e.src] >= pos[e.dst]:
            raise GraphFormatError(f"order is not topological at {e.src} -> {e.dst}")
    live = []
    for i, node in enumerate(order):
        total = 0
        for src in order[: i + 1]:
            pending = [e.bytes for e in g.out_edges(src) if src == node or pos[e.dst] >= i]
            if pending:
                total += max(pending)
        live.append(total)
    return MemoryProfile(tuple(order), tuple(live))
