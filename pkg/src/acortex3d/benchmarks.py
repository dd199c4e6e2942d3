"""Builders for the shipped benchmark graphs.

The JSON files under ``data/graphs`` are generated by :func:`write_all`;
the builders stay in the package so the files can be regenerated and
checked.  Average pooling is scheduled as a pooling AUX step, and GNMT
embedding tables are treated as inputs (they are lookups, not VMMs).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .netgraph import NetworkGraph, graph_from_dict, load_graph


class _Builder:
    def __init__(self, name: str, word_bits: int = 4):
        self.name = name
        self.word_bits = word_bits
        self.nodes = []
        self.edges = []
        self.words = {}  # node id -> output words

    def add(self, label: str, kind: str, out_words: int, srcs=(), **attrs) -> str:
        nid = f"n{len(self.nodes):04d}_{label}"
        self.nodes.append({"id": nid, "kind": kind, **attrs})
        self.words[nid] = out_words
        for src in srcs:
            self.edges.append({"src": src, "dst": nid, "words": self.words[src]})
        return nid

    def conv(self, label, src, hw, in_c, out_c, k=1, stride=1, pad=None, act="relu", **extra):
        h, w = hw
        pad = k // 2 if pad is None else pad
        geo = {"in_h": h, "in_w": w, "in_c": in_c, "out_c": out_c, "kernel": [k, k], "stride": stride, "padding": pad}
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        srcs = src if isinstance(src, (list, tuple)) else [src]
        nid = self.add(label, "conv", oh * ow * out_c, srcs, activation=act, conv=geo, **extra)
        return nid, (oh, ow)

    def pool(self, label, src, hw, c, k, stride, pad=0):
        h, w = hw
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        geo = {"in_h": h, "in_w": w, "in_c": c, "out_c": c, "kernel": [k, k], "stride": stride, "padding": pad}
        nid = self.add(label, "maxpool", oh * ow * c, [src], conv=geo)
        return nid, (oh, ow)

    def to_dict(self) -> dict:
        return {"name": self.name, "word_bits": self.word_bits, "nodes": self.nodes, "edges": self.edges}


def toy_chain() -> dict:
    b = _Builder("toy-chain")
    x = b.add("input", "input", 256)
    h = b.add("fc1", "fc", 128, [x], activation="relu", inputs=256, outputs=128)
    y = b.add("fc2", "fc", 10, [h], inputs=128, outputs=10)
    b.add("output", "output", 0, [y])
    return b.to_dict()


_INCEPTION = [
    # name, 1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj
    ("3a", 64, 96, 128, 16, 32, 32),
    ("3b", 128, 128, 192, 32, 96, 64),
    ("pool3",),
    ("4a", 192, 96, 208, 16, 48, 64),
    ("4b", 160, 112, 224, 24, 64, 64),
    ("4c", 128, 128, 256, 24, 64, 64),
    ("4d", 112, 144, 288, 32, 64, 64),
    ("4e", 256, 160, 320, 32, 128, 128),
    ("pool4",),
    ("5a", 256, 160, 320, 32, 128, 128),
    ("5b", 384, 192, 384, 48, 128, 128),
]


def inception_v1() -> dict:
    b = _Builder("inception-v1")
    x = b.add("input", "input", 224 * 224 * 3)
    x, hw = b.conv("conv1_7x7", x, (224, 224), 3, 64, k=7, stride=2)
    x, hw = b.pool("pool1", x, hw, 64, 3, 2, pad=1)
    x, hw = b.conv("conv2_reduce", x, hw, 64, 64)
    x, hw = b.conv("conv2_3x3", x, hw, 64, 192, k=3)
    x, hw = b.pool("pool2", x, hw, 192, 3, 2, pad=1)
    c = 192
    for entry in _INCEPTION:
        if len(entry) == 1:
            x, hw = b.pool(entry[0], x, hw, c, 3, 2, pad=1)
            continue
        name, c1, r3, c3, r5, c5, pp = entry
        a, _ = b.conv(f"i{name}_1x1", x, hw, c, c1)
        r, _ = b.conv(f"i{name}_3x3r", x, hw, c, r3)
        t, _ = b.conv(f"i{name}_3x3", r, hw, r3, c3, k=3)
        r, _ = b.conv(f"i{name}_5x5r", x, hw, c, r5)
        f, _ = b.conv(f"i{name}_5x5", r, hw, r5, c5, k=5)
        p, _ = b.pool(f"i{name}_pool", x, hw, c, 3, 1, pad=1)
        p, _ = b.conv(f"i{name}_proj", p, hw, c, pp)
        c = c1 + c3 + c5 + pp
        x = b.add(f"i{name}_concat", "concat", hw[0] * hw[1] * c, [a, t, f, p])
    x, hw = b.pool("avgpool", x, hw, c, 7, 1)
    y = b.add("fc", "fc", 1000, [x], inputs=c, outputs=1000)
    b.add("output", "output", 0, [y])
    return b.to_dict()


def resnet152() -> dict:
    b = _Builder("resnet-152")
    x = b.add("input", "input", 224 * 224 * 3)
    x, hw = b.conv("conv1", x, (224, 224), 3, 64, k=7, stride=2)
    x, hw = b.pool("pool1", x, hw, 64, 3, 2, pad=1)
    c = 64
    for stage, (blocks, width) in enumerate(zip((3, 8, 36, 3), (64, 128, 256, 512)), start=2):
        for i in range(blocks):
            stride = 2 if (i == 0 and stage > 2) else 1
            tag = f"res{stage}_{i}"
            out_c = 4 * width
            if i == 0:
                short, _ = b.conv(f"{tag}_proj", x, hw, c, out_c, stride=stride, act="linear")
            else:
                short = x
            h1, _ = b.conv(f"{tag}_a", x, hw, c, width)
            h2, hw2 = b.conv(f"{tag}_b", h1, hw, width, width, k=3, stride=stride)
            # residual add fused into the third convolution's output stage
            x, hw = b.conv(f"{tag}_c", [h2, short], hw2, width, out_c, fused_add=True)
            c = out_c
    x, hw = b.pool("avgpool", x, hw, c, 7, 1)
    y = b.add("fc", "fc", 1000, [x], inputs=c, outputs=1000)
    b.add("output", "output", 0, [y])
    return b.to_dict()


def gnmt(hidden: int = 1024, vocab: int = 32317, src_len: int = 25, tgt_len: int = 25) -> dict:
    b = _Builder(f"gnmt-{hidden}")
    h = hidden
    src = b.add("src_embedding", "input", src_len * h)
    tgt = b.add("tgt_embedding", "input", tgt_len * h)

    def lstm(label, srcs, n_in, steps):
        return b.add(label, "recurrent", steps * h, srcs, inputs=n_in, hidden=h, gates=4, seq_len=steps)

    fw = lstm("enc0_fw", [src], h, src_len)
    bw = lstm("enc0_bw", [src], h, src_len)
    e = lstm("enc1", [fw, bw], 2 * h, src_len)
    e2 = lstm("enc2", [e], h, src_len)
    e = b.add("enc2_res", "eltwise-add", src_len * h, [e, e2], elements=src_len * h)
    e3 = lstm("enc3", [e], h, src_len)
    enc = b.add("enc3_res", "eltwise-add", src_len * h, [e, e3], elements=src_len * h)

    d0 = lstm("dec0", [tgt], h, tgt_len)
    q = b.add("attn_query", "fc", tgt_len * h, [d0], activation="tanh", inputs=h, outputs=h, seq_len=tgt_len)
    k = b.add("attn_keys", "fc", src_len * h, [enc], inputs=h, outputs=h, seq_len=src_len)
    scores = b.add("attn_scores", "eltwise-mul", tgt_len * src_len, [q, k], elements=tgt_len * src_len * h)
    ctx = b.add("attn_context", "eltwise-mul", tgt_len * h, [scores, enc], elements=tgt_len * src_len * h)
    d = lstm("dec1", [d0, ctx], 2 * h, tgt_len)
    for i in (2, 3):
        d2 = lstm(f"dec{i}", [d, ctx], 2 * h, tgt_len)
        d = b.add(f"dec{i}_res", "eltwise-add", tgt_len * h, [d, d2], elements=tgt_len * h)
    y = b.add("classifier", "fc", tgt_len * vocab, [d], inputs=h, outputs=vocab, seq_len=tgt_len)
    b.add("output", "output", 0, [y])
    return b.to_dict()


BUILDERS = {
    "toy-chain": toy_chain,
    "inception-v1": inception_v1,
    "resnet-152": resnet152,
    "gnmt-1024": gnmt,
}

BENCHMARKS = ("inception-v1", "resnet-152", "gnmt-1024")


def graph_path(name: str):
    return resources.files("acortex3d").joinpath(f"data/graphs/{name}.json")


def load_benchmark(name: str) -> NetworkGraph:
    """Load a shipped graph by name, or a graph file by path."""
    if name in BUILDERS:
        with resources.as_file(graph_path(name)) as p:
            return load_graph(p)
    return load_graph(name)


def write_all(directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        data = build()
        graph_from_dict(data)  # validate before writing
        (directory / f"{name}.json").write_text(json.dumps(data, indent=1) + "\n")


if __name__ == "__main__":
    import sys

    write_all(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "data" / "graphs")
