"""Weight placement: quantize kernels to K-tiles, split oversized ones, pack into layers.

Coordinates are in K-tiles.  One layer is a grid of ``M`` tile rows by
``2N`` tile columns (each tile is ``K`` inputs by ``K`` differential
outputs); a single piece spans at most ``M x N`` tiles, the one-step VMM
limit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .arch import ArchConfig
from .errors import CapacityError, ContractError, DomainError

ROW_FIRST = "row-first"
COLUMN_FIRST = "column-first"


def quantize_dims(rows: int, cols: int, k: int) -> tuple[int, int]:
    if rows < 1 or cols < 1 or k < 1:
        raise ContractError("rows, cols and K must be >= 1")
    return math.ceil(rows / k) * k, math.ceil(cols / k) * k


@dataclass(frozen=True)
class Piece:
    kernel: str
    index: int
    row0: int  # offset inside the kernel, in tiles
    col0: int
    rows: int  # size in tiles
    cols: int

    @property
    def area(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class KernelTileSet:
    kernel: str
    rows: int
    cols: int
    rows_q: int
    cols_q: int
    mode: str
    pieces: tuple

    @property
    def tiles(self) -> int:
        return sum(p.area for p in self.pieces)


def reshape_to_3d(kernel: str, rows: int, cols: int, cfg: ArchConfig, mode: str = ROW_FIRST) -> KernelTileSet:
    """Split a ``rows x cols`` kernel into pieces no larger than one VMM step.

    Pieces are enumerated row-major (``r0c0, r0c1, r1c0, ...``) for row-first
    and column-major for column-first.  For convolutions the rows are the
    flattened window, so shifting the input by one window column is the same
    as shifting the stored tile rows.
    """
    if mode not in (ROW_FIRST, COLUMN_FIRST):
        raise ContractError(f"unknown reshape mode {mode!r}")
    rows_q, cols_q = quantize_dims(rows, cols, cfg.k)
    tr, tc = rows_q // cfg.k, cols_q // cfg.k
    pr, pc = cfg.max_piece_tiles
    row_starts = range(0, tr, pr)
    col_starts = range(0, tc, pc)
    if mode == ROW_FIRST:
        cells = [(r, c) for r in row_starts for c in col_starts]
    else:
        cells = [(r, c) for c in col_starts for r in row_starts]
    pieces = tuple(
        Piece(kernel, i, r, c, min(pr, tr - r), min(pc, tc - c)) for i, (r, c) in enumerate(cells)
    )
    return KernelTileSet(kernel, rows, cols, rows_q, cols_q, mode, pieces)


@dataclass(frozen=True)
class PiecePlacement:
    piece: Piece
    layer: int
    row: int
    col: int


@dataclass
class Placement:
    cfg: ArchConfig
    pieces: list  # PiecePlacement, in placement order
    iteration: int = 0
    seed: int | None = None

    @property
    def layers_used(self) -> int:
        return len({p.layer for p in self.pieces})

    @property
    def tiles_used(self) -> int:
        return sum(p.piece.area for p in self.pieces)

    @property
    def fragmentation(self) -> int:
        """Unoccupied tiles in utilized layers."""
        rows, cols = self.cfg.grid_tiles
        return self.layers_used * rows * cols - self.tiles_used

    @property
    def layer_switches(self) -> int:
        """Pieces placed on a different layer than the previous piece of the same kernel."""
        by_kernel = {}
        for pp in sorted(self.pieces, key=lambda p: (p.piece.kernel, p.piece.index)):
            by_kernel.setdefault(pp.piece.kernel, []).append(pp.layer)
        return sum(sum(a != b for a, b in zip(ls, ls[1:])) for ls in by_kernel.values())

    def by_kernel(self) -> dict:
        out = {}
        for pp in self.pieces:
            out.setdefault(pp.piece.kernel, []).append(pp)
        for v in out.values():
            v.sort(key=lambda p: p.piece.index)
        return out

    def occupancy(self) -> np.ndarray:
        """Per-layer tile grid, ``-1`` free, else the index of the owning kernel (first-seen order)."""
        rows, cols = self.cfg.grid_tiles
        grid = np.full((self.cfg.effective_layers, rows, cols), -1, dtype=int)
        ids = {}
        for pp in self.pieces:
            kid = ids.setdefault(pp.piece.kernel, len(ids))
            grid[pp.layer, pp.row : pp.row + pp.piece.rows, pp.col : pp.col + pp.piece.cols] = kid
        return grid

    def validate(self):
        rows, cols = self.cfg.grid_tiles
        seen = np.zeros((self.cfg.effective_layers, rows, cols), dtype=int)
        for pp in self.pieces:
            if not 0 <= pp.layer < self.cfg.effective_layers:
                raise ContractError(f"piece {pp.piece} on layer {pp.layer} outside the array")
            if pp.row < 0 or pp.col < 0 or pp.row + pp.piece.rows > rows or pp.col + pp.piece.cols > cols:
                raise ContractError(f"piece {pp.piece} leaves the grid")
            seen[pp.layer, pp.row : pp.row + pp.piece.rows, pp.col : pp.col + pp.piece.cols] += 1
        if seen.max(initial=0) > 1:
            raise ContractError("overlapping pieces")
        return self

    def to_dict(self) -> dict:
        return {
            "layers_used": self.layers_used,
            "tiles_used": self.tiles_used,
            "fragmentation": self.fragmentation,
            "layer_switches": self.layer_switches,
            "iteration": self.iteration,
            "kernels": {
                k: [
                    {"piece": p.piece.index, "layer": p.layer, "row": p.row, "col": p.col,
                     "rows": p.piece.rows, "cols": p.piece.cols,
                     "kernel_row": p.piece.row0, "kernel_col": p.piece.col0}
                    for p in v
                ]
                for k, v in self.by_kernel().items()
            },
        }

    def write(self, directory: str | Path) -> list:
        """Write ``placement.json`` and one occupancy CSV per utilized layer."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = [directory / "placement.json"]
        written[0].write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        grid = self.occupancy()
        for layer in sorted({p.layer for p in self.pieces}):
            path = directory / f"layer_{layer:03d}.csv"
            with path.open("w", newline="") as fh:
                csv.writer(fh).writerows(grid[layer].tolist())
            written.append(path)
        return written


class _Packer:
    def __init__(self, cfg: ArchConfig, prefer_colayer: bool):
        self.cfg = cfg
        self.rows, self.cols = cfg.grid_tiles
        self.layers = cfg.effective_layers
        self.occ = np.zeros((self.layers, self.rows, self.cols), dtype=bool)
        self.free = np.full(self.layers, self.rows * self.cols)
        self.prefer_colayer = prefer_colayer

    def fit_in_layer(self, layer: int, piece: Piece):
        if self.free[layer] < piece.area:
            return None
        occ = self.occ[layer]
        h, w = piece.rows, piece.cols
        # summed-area table: any window with zero occupied tiles is a fit
        sat = np.zeros((self.rows + 1, self.cols + 1), dtype=int)
        sat[1:, 1:] = occ.cumsum(0).cumsum(1)
        win = sat[h:, w:] - sat[:-h, w:] - sat[h:, :-w] + sat[:-h, :-w]
        hits = np.argwhere(win == 0)
        if hits.size == 0:
            return None
        r, c = hits[0]  # argwhere is row-major: lowest row, then lowest column
        return int(r), int(c)

    def place(self, piece: Piece, hint: int | None):
        order = range(self.layers)
        if self.prefer_colayer and hint is not None:
            order = [hint, *(l for l in range(self.layers) if l != hint)]
        for layer in order:
            pos = self.fit_in_layer(layer, piece)
            if pos is not None:
                r, c = pos
                self.occ[layer, r : r + piece.rows, c : c + piece.cols] = True
                self.free[layer] -= piece.area
                return PiecePlacement(piece, layer, r, c)
        return None


def _first_fit(kernels: Sequence[KernelTileSet], cfg: ArchConfig, prefer_colayer: bool) -> tuple:
    packer = _Packer(cfg, prefer_colayer)
    placed, failed = [], []
    for ks in kernels:
        hint = None
        for piece in ks.pieces:
            pp = packer.place(piece, hint)
            if pp is None:
                failed.append(piece)
                continue
            placed.append(pp)
            hint = pp.layer
    return placed, failed


def _shortfall(failed: Sequence[Piece], cfg: ArchConfig) -> int:
    rows, cols = cfg.grid_tiles
    return max(1, math.ceil(sum(p.area for p in failed) / (rows * cols)))


def pack(
    kernels: Sequence[KernelTileSet],
    cfg: ArchConfig,
    iterations: int = 32,
    seed: int = 0,
    prefer_colayer: bool = True,
    shuffle: bool = True,
) -> Placement:
    """Randomized first-fit packing minimizing the number of utilized layers.

    Iteration 0 uses the given kernel order; later iterations shuffle it.
    With ``shuffle=False`` every iteration uses the given order.
    """
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    rows, cols = cfg.grid_tiles
    pr, pc = cfg.max_piece_tiles
    for ks in kernels:
        for p in ks.pieces:
            if p.rows > pr or p.cols > pc:
                raise ContractError(f"piece {p} exceeds the one-step limit; reshape it first")
    demand = sum(ks.tiles for ks in kernels)
    capacity = cfg.effective_layers * rows * cols
    if demand > capacity:
        raise CapacityError(
            f"{demand} tiles requested but only {capacity} available",
            shortfall_layers=math.ceil((demand - capacity) / (rows * cols)),
        )
    rng = np.random.default_rng(seed)
    best, best_key, last_fail = None, None, None
    for it in range(iterations):
        order = list(kernels)
        if shuffle and it > 0:
            order = [order[i] for i in rng.permutation(len(order))]
        placed, failed = _first_fit(order, cfg, prefer_colayer)
        if failed:
            last_fail = failed
            continue
        cand = Placement(cfg, placed, it, seed)
        key = (cand.layers_used, cand.fragmentation, it)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    if best is None:
        raise CapacityError(
            f"no iteration placed every piece ({len(last_fail)} pieces left over)",
            shortfall_layers=_shortfall(last_fail, cfg),
        )
    return best


def tile_lower_bound(kernels: Sequence[KernelTileSet], cfg: ArchConfig) -> int:
    rows, cols = cfg.grid_tiles
    return math.ceil(sum(ks.tiles for ks in kernels) / (rows * cols))


def kernels_for_graph(g, cfg: ArchConfig, mode: str = ROW_FIRST) -> list:
    """One tile set per weighted node, in processing order."""
    from .netgraph import processing_order

    out = []
    for nid in processing_order(g):
        node = g.nodes[nid]
        if node.weighted:
            out.append(reshape_to_3d(nid, node.inputs, node.outputs, cfg, mode))
    return out


def quantize_weights(w, bits: int = 4) -> np.ndarray:
    """Round magnitudes to ``2**bits`` programmed levels of step ``2**-bits``, clipped to 1."""
    levels = 2**bits
    w = np.asarray(w, dtype=float)
    return np.minimum(np.round(np.abs(w) * levels), levels) / levels


def place_weights(placement: Placement, values: dict) -> np.ndarray:
    """Materialize kernels into a cell image ``(layers, M*K, 2N*2K)``.

    Each K-tile occupies ``K`` rows and ``2K`` columns; signed weight
    ``(i, j)`` of a tile sits on columns ``2j`` (plus) and ``2j+1`` (minus).
    """
    cfg = placement.cfg
    k = cfg.k
    rows, cols = cfg.grid_tiles
    image = np.zeros((cfg.effective_layers, rows * k, cols * 2 * k))
    for name, pieces in placement.by_kernel().items():
        if name not in values:
            raise ContractError(f"no values supplied for kernel {name}")
        w = np.asarray(values[name], dtype=float)
        if not np.all(np.isfinite(w)) or (w.size and np.abs(w).max() > 1.0):
            raise DomainError(f"kernel {name} has weights outside [-1, 1]")
        rq = sum(p.piece.rows for p in pieces if p.piece.col0 == pieces[0].piece.col0) * k
        cq = sum(p.piece.cols for p in pieces if p.piece.row0 == pieces[0].piece.row0) * k
        if w.ndim != 2 or w.shape[0] > rq or w.shape[1] > cq or w.shape[0] <= rq - k or w.shape[1] <= cq - k:
            raise ContractError(f"kernel {name} values {w.shape} do not match placed size {rq}x{cq}")
        padded = np.zeros((rq, cq))
        padded[: w.shape[0], : w.shape[1]] = w
        mag = quantize_weights(padded, cfg.weight_bits)
        plus = np.where(padded > 0, mag, 0.0)
        minus = np.where(padded < 0, mag, 0.0)
        for pp in pieces:
            p = pp.piece
            r0, c0 = p.row0 * k, p.col0 * k
            sl_w = (slice(r0, r0 + p.rows * k), slice(c0, c0 + p.cols * k))
            rr = slice(pp.row * k, (pp.row + p.rows) * k)
            cc0 = pp.col * 2 * k
            image[pp.layer, rr, cc0 : cc0 + p.cols * 2 * k : 2] = plus[sl_w]
            image[pp.layer, rr, cc0 + 1 : cc0 + p.cols * 2 * k : 2] = minus[sl_w]
    return image


def extract_weights(image: np.ndarray, placement: Placement, name: str, shape: tuple) -> np.ndarray:
    """Inverse of :func:`place_weights` for one kernel (signed, quantized)."""
    k = placement.cfg.k
    pieces = placement.by_kernel()[name]
    rq = max((p.piece.row0 + p.piece.rows) for p in pieces) * k
    cq = max((p.piece.col0 + p.piece.cols) for p in pieces) * k
    out = np.zeros((rq, cq))
    for pp in pieces:
        p = pp.piece
        rr = slice(pp.row * k, (pp.row + p.rows) * k)
        cc0 = pp.col * 2 * k
        block = image[pp.layer, rr, cc0 : cc0 + p.cols * 2 * k]
        out[p.row0 * k : (p.row0 + p.rows) * k, p.col0 * k : (p.col0 + p.cols) * k] = block[:, ::2] - block[:, 1::2]
    return out[: shape[0], : shape[1]]
