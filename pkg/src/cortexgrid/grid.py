"""Bidimensional grid of cortical columns and its mapping onto ranks.

Columns are enumerated row-major (x fastest); inside a column the neuron
range is the F block, then B, then I.  A partition assigns rectangular
tiles of columns to ranks, or, when there are more ranks than columns,
splits each column's neuron range into equal contiguous fragments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PopulationKind, encode_neuron_id, decode_neuron_id, scaled_counts


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry and per-column population sizes."""

    width: int
    height: int
    k_f: int = 250
    k_b: int = 750
    k_i: int = 250
    imd_mm: float | None = None   # physical grid spacing, for reporting only

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if min(self.k_f, self.k_b, self.k_i) < 1:
            raise ValueError("population sizes must be >= 1")

    @classmethod
    def square(cls, side: int, module_scale: float = 1.0, imd_mm=None) -> "GridSpec":
        kf, kb, ki = scaled_counts(module_scale)
        return cls(side, side, kf, kb, ki, imd_mm)

    @property
    def columns(self) -> int:
        return self.width * self.height

    @property
    def column_size(self) -> int:
        return self.k_f + self.k_b + self.k_i

    @property
    def total_neurons(self) -> int:
        return self.columns * self.column_size

    def pop_size(self, kind: PopulationKind) -> int:
        return (self.k_f, self.k_b, self.k_i)[kind]

    def column_index(self, x, y):
        return np.asarray(y) * self.width + np.asarray(x)

    def column_xy(self, index):
        index = np.asarray(index)
        return index % self.width, index // self.width

    # -- global ids ---------------------------------------------------------

    def global_id(self, x, y, kind, within):
        """Partition-independent neuron id: column-major blocks F|B|I."""
        offs = np.asarray([0, self.k_f, self.k_f + self.k_b])[np.asarray(kind)]
        return self.column_index(x, y) * self.column_size + offs + np.asarray(within)

    def locate(self, gid):
        """Inverse of :meth:`global_id`: (x, y, kind, within-population index)."""
        gid = np.asarray(gid)
        if np.any(gid < 0) or np.any(gid >= self.total_neurons):
            raise ValueError("neuron id out of range for this grid")
        col, within_col = np.divmod(gid, self.column_size)
        x, y = self.column_xy(col)
        kind = np.where(
            within_col < self.k_f, int(PopulationKind.F),
            np.where(within_col < self.k_f + self.k_b, int(PopulationKind.B),
                     int(PopulationKind.I)),
        )
        offs = np.asarray([0, self.k_f, self.k_f + self.k_b])[kind]
        return x, y, kind, within_col - offs

    def kind_of(self, gid):
        within_col = np.asarray(gid) % self.column_size
        return np.where(
            within_col < self.k_f, int(PopulationKind.F),
            np.where(within_col < self.k_f + self.k_b, int(PopulationKind.B),
                     int(PopulationKind.I)),
        )


def distance(a, b) -> float:
    """Euclidean inter-column distance in imd units."""
    ax, ay = a
    bx, by = b
    return float(np.hypot(ax - bx, ay - by))


def distance_matrix(grid: GridSpec) -> np.ndarray:
    """(columns, columns) Euclidean distances in imd units."""
    idx = np.arange(grid.columns)
    x, y = grid.column_xy(idx)
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class PartitionMap:
    """Assignment of the grid onto ranks.

    Tiles are rectangles in column coordinates.  With more ranks than
    columns each tile is a single column and `fragments` > 1 ranks share
    it, splitting the column's neuron range contiguously.
    """

    grid: GridSpec
    ranks: int
    tiles_x: int               # tile grid dimensions (tiles, not columns)
    tiles_y: int
    tile_w: int                # columns per tile along x / y
    tile_h: int
    fragments: int = 1         # ranks per column (1 = no splitting)
    bits_for_local: int = field(init=False, default=0)

    def __post_init__(self):
        mx = self.max_local_count()
        bits = max(1, int(np.ceil(np.log2(max(mx, 2)))))
        object.__setattr__(self, "bits_for_local", bits)

    # -- geometry -----------------------------------------------------------

    def tile_of_column(self, col_index):
        x, y = self.grid.column_xy(col_index)
        return (np.asarray(x) // self.tile_w) + (np.asarray(y) // self.tile_h) * self.tiles_x

    def rank_tile_rect(self, rank: int):
        """Column rectangle (x0, y0, w, h) hosted by `rank`."""
        tile = rank // self.fragments
        tx, ty = tile % self.tiles_x, tile // self.tiles_x
        return (tx * self.tile_w, ty * self.tile_h, self.tile_w, self.tile_h)

    def columns_of_rank(self, rank: int) -> np.ndarray:
        x0, y0, w, h = self.rank_tile_rect(rank)
        xs = np.arange(x0, x0 + w)
        ys = np.arange(y0, y0 + h)
        gx, gy = np.meshgrid(xs, ys)
        return self.grid.column_index(gx.ravel(), gy.ravel())

    def _fragment_bounds(self, frag: int) -> tuple[int, int]:
        """Contiguous [lo, hi) slice of a column's neuron range for a fragment."""
        k = self.grid.column_size
        lo = (k * frag) // self.fragments
        hi = (k * (frag + 1)) // self.fragments
        return lo, hi

    def local_count(self, rank: int) -> int:
        if self.fragments == 1:
            return self.tile_w * self.tile_h * self.grid.column_size
        lo, hi = self._fragment_bounds(rank % self.fragments)
        return hi - lo

    def max_local_count(self) -> int:
        if self.fragments == 1:
            return self.tile_w * self.tile_h * self.grid.column_size
        return max(self._fragment_bounds(f)[1] - self._fragment_bounds(f)[0]
                   for f in range(self.fragments))

    # -- neuron mapping -----------------------------------------------------

    def rank_of_gid(self, gid):
        """Hosting rank of each global neuron id (vectorized)."""
        gid = np.asarray(gid)
        col, within = np.divmod(gid, self.grid.column_size)
        tile = self.tile_of_column(col)
        if self.fragments == 1:
            return tile
        k = self.grid.column_size
        bounds = np.array([(k * f) // self.fragments for f in range(self.fragments + 1)])
        frag = np.searchsorted(bounds, within, side="right") - 1
        return tile * self.fragments + frag

    def local_index_of_gid(self, gid):
        """Local (within-rank) index of each global id, following tile order."""
        gid = np.asarray(gid)
        col, within = np.divmod(gid, self.grid.column_size)
        x, y = self.grid.column_xy(col)
        x0 = (x // self.tile_w) * self.tile_w
        y0 = (y // self.tile_h) * self.tile_h
        col_in_tile = (y - y0) * self.tile_w + (x - x0)
        if self.fragments == 1:
            return col_in_tile * self.grid.column_size + within
        k = self.grid.column_size
        bounds = np.array([(k * f) // self.fragments for f in range(self.fragments + 1)])
        frag = np.searchsorted(bounds, within, side="right") - 1
        return within - bounds[frag]

    def gid_of_rank_local(self, rank: int, local):
        """Global ids for local indices on one rank (vectorized)."""
        local = np.asarray(local)
        if self.fragments == 1:
            k = self.grid.column_size
            col_in_tile, within = np.divmod(local, k)
        else:
            lo, _ = self._fragment_bounds(rank % self.fragments)
            col_in_tile = np.zeros_like(local)
            within = local + lo
        x0, y0, w, h = self.rank_tile_rect(rank)
        cx = x0 + col_in_tile % w
        cy = y0 + col_in_tile // w
        col = self.grid.column_index(cx, cy)
        return col * self.grid.column_size + within

    def packed_of_gid(self, gid):
        """Packed wire id (rank << bits | local) for global ids."""
        return encode_neuron_id(
            self.rank_of_gid(gid), self.local_index_of_gid(gid), self.bits_for_local
        )

    def gid_of_packed(self, packed):
        rank, local = decode_neuron_id(packed, self.bits_for_local)
        rank = np.asarray(rank)
        local = np.asarray(local)
        out = np.empty(rank.shape, dtype=np.int64)
        for r in np.unique(rank):
            m = rank == r
            out[m] = self.gid_of_rank_local(int(r), local[m])
        return out[()] if out.ndim == 0 else out

    # -- reporting ----------------------------------------------------------

    def dump(self) -> str:
        """One line per rank: tile rectangle and local neuron count."""
        lines = []
        for r in range(self.ranks):
            x0, y0, w, h = self.rank_tile_rect(r)
            if self.fragments > 1:
                lo, hi = self._fragment_bounds(r % self.fragments)
                span = f"fragment[{lo}:{hi})"
            else:
                span = f"{self.local_count(r)} neurons"
            lines.append(f"rank {r}: tile x[{x0}:{x0+w}) y[{y0}:{y0+h}) {span}")
        return "\n".join(lines) + "\n"


def _divisor_pairs(r: int):
    for a in range(1, int(np.sqrt(r)) + 1):
        if r % a == 0:
            yield a, r // a
            if a != r // a:
                yield r // a, a


def feasible_rank_counts(grid: GridSpec, limit: int = 4096) -> list[int]:
    """Rank counts admitting a valid partition, ascending."""
    out = []
    for r in range(1, limit + 1):
        try:
            partition(grid, r)
            out.append(r)
        except ValueError:
            pass
    return out


def partition(grid: GridSpec, ranks: int) -> PartitionMap:
    """Partition the grid onto `ranks` workers as near-square tiles.

    ranks <= columns: requires a factorization ranks = rx*ry with rx | W
    and ry | H; the most square tile wins (ties: larger rx).
    ranks > columns: requires ranks = fragments * columns; each column is
    split into `fragments` contiguous neuron ranges.
    """
    if ranks < 1:
        raise ValueError("ranks must be >= 1")
    ncol = grid.columns
    if ranks <= ncol:
        best = None
        for rx, ry in _divisor_pairs(ranks):
            if grid.width % rx or grid.height % ry:
                continue
            tw, th = grid.width // rx, grid.height // ry
            score = (abs(tw - th), -rx)
            if best is None or score < best[0]:
                best = (score, rx, ry, tw, th)
        if best is None:
            near = _nearest_feasible(grid, ranks)
            raise ValueError(
                f"no rectangular tiling of {grid.width}x{grid.height} into "
                f"{ranks} ranks; nearest feasible rank counts: {near}"
            )
        _, rx, ry, tw, th = best
        return PartitionMap(grid, ranks, rx, ry, tw, th, fragments=1)
    if ranks % ncol:
        near = _nearest_feasible(grid, ranks)
        raise ValueError(
            f"{ranks} ranks over {ncol} columns requires an integer number of "
            f"fragments per column; nearest feasible rank counts: {near}"
        )
    frags = ranks // ncol
    if frags > grid.column_size:
        raise ValueError("more fragments than neurons per column")
    return PartitionMap(grid, ranks, grid.width, grid.height, 1, 1, fragments=frags)


def _nearest_feasible(grid: GridSpec, ranks: int) -> list[int]:
    found = []
    for delta in range(0, max(16, ranks)):
        for cand in {ranks - delta, ranks + delta}:
            if cand < 1:
                continue
            try:
                partition(grid, cand)
            except ValueError:
                continue
            if cand not in found:
                found.append(cand)
        if len(found) >= 2:
            break
    return sorted(found)
