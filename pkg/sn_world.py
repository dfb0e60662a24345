"""
Static World Representation
Occupancy grids, poses, geodesic distances, shortest paths and line-of-sight queries
"""

import heapq
import logging
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sn_config import SocialNavError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]
Cell = Tuple[int, int]

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi
UNREACHABLE = math.inf
SNAP_RADIUS_CELLS = 2

# Neighbour order is fixed; ties are broken on cell index, not on this order.
_AXIAL_MOVES = ((-1, 0), (0, -1), (0, 1), (1, 0))
_DIAGONAL_MOVES = ((-1, -1), (-1, 1), (1, -1), (1, 1))


class GridQueryError(SocialNavError):
    """Query point outside the grid or stuck in an obstacle"""


class UnreachableError(SocialNavError):
    """No path connects the two query points"""


class MapFormatError(SocialNavError):
    """Malformed map file"""


def wrap_angle(angle: float) -> float:
    """Normalise an angle to [-pi, pi); values already in range are returned unchanged"""
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    wrapped -= math.pi
    if wrapped >= math.pi:
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"Pose components must be finite: {self}")
        object.__setattr__(self, 'theta', wrap_angle(self.theta))

    @property
    def position(self) -> Point:
        return (self.x, self.y)

    def to_list(self) -> List[float]:
        return [self.x, self.y, self.theta]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'Pose':
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class PathResult:
    waypoints: Tuple[Point, ...]
    length: float


def euclidean_distance(a: Point, b: Point) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def _step_cost(n_axial: int, n_diagonal: int) -> float:
    # Costs are rebuilt from step counts so equal paths give bit-identical lengths.
    return n_axial + n_diagonal * SQRT2


class OccupancyGrid:
    """Row-major boolean occupancy grid; row 0 is the top (largest y) row.

    The area outside the grid is an implicit wall: every out-of-bounds cell reads
    as occupied for collision, planning and visibility queries.
    """

    def __init__(self, width: int, height: int, resolution: float, cells, map_id: str = "map"):
        if width <= 0 or height <= 0:
            raise MapFormatError("Grid dimensions must be positive")
        if not resolution > 0:
            raise MapFormatError("Grid resolution must be positive")
        array = np.asarray(cells, dtype=bool)
        if array.size != width * height:
            raise MapFormatError(f"Expected {width * height} cells, got {array.size}")
        self.width = int(width)
        self.height = int(height)
        self.resolution = float(resolution)
        self.map_id = map_id
        self.cells = array.reshape(self.height, self.width).copy()
        self.cells.setflags(write=False)

    def __eq__(self, other) -> bool:
        return (isinstance(other, OccupancyGrid)
                and self.width == other.width and self.height == other.height
                and self.resolution == other.resolution
                and bool(np.array_equal(self.cells, other.cells)))

    def __hash__(self) -> int:
        return id(self)

    def __repr__(self) -> str:
        return f"OccupancyGrid({self.map_id!r}, {self.width}x{self.height} @ {self.resolution} m)"

    @property
    def size_x(self) -> float:
        return self.width * self.resolution

    @property
    def size_y(self) -> float:
        return self.height * self.resolution

    def in_bounds(self, point: Point) -> bool:
        x, y = point
        return 0.0 <= x < self.size_x and 0.0 <= y < self.size_y

    def point_to_cell(self, point: Point) -> Cell:
        if not self.in_bounds(point):
            raise GridQueryError(f"Point {point} outside grid {self.size_x} x {self.size_y} m")
        col = int(math.floor(point[0] / self.resolution))
        row = self.height - 1 - int(math.floor(point[1] / self.resolution))
        return (min(max(row, 0), self.height - 1), min(max(col, 0), self.width - 1))

    def cell_center(self, cell: Cell) -> Point:
        row, col = cell
        return ((col + 0.5) * self.resolution, (self.height - 1 - row + 0.5) * self.resolution)

    def cell_index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def index_to_cell(self, index: int) -> Cell:
        return divmod(index, self.width)

    def is_free(self, cell: Cell) -> bool:
        row, col = cell
        if 0 <= row < self.height and 0 <= col < self.width:
            return not self.cells[row, col]
        return False

    def free_cells(self) -> List[Cell]:
        rows, cols = np.nonzero(~self.cells)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def disc_collides(self, center: Point, radius: float) -> bool:
        """True if a disc overlaps any occupied or out-of-bounds cell"""
        res = self.resolution
        x, y = center
        col_lo = int(math.floor((x - radius) / res))
        col_hi = int(math.floor((x + radius) / res))
        yb_lo = int(math.floor((y - radius) / res))
        yb_hi = int(math.floor((y + radius) / res))
        r2 = radius * radius
        for yb in range(yb_lo, yb_hi + 1):
            row = self.height - 1 - yb
            for col in range(col_lo, col_hi + 1):
                if self.is_free((row, col)):
                    continue
                nx = min(max(x, col * res), (col + 1) * res)
                ny = min(max(y, yb * res), (yb + 1) * res)
                if (nx - x) ** 2 + (ny - y) ** 2 < r2:
                    return True
        return False

    def inflate(self, radius: float) -> 'OccupancyGrid':
        """Block every cell whose centre lies within `radius` of an obstacle or the grid edge"""
        if radius <= 0:
            return OccupancyGrid(self.width, self.height, self.resolution, self.cells, self.map_id)
        margin = int(math.ceil(radius / self.resolution)) + 1
        padded = np.pad(self.cells, margin, mode='constant', constant_values=True)
        inflated = np.zeros_like(self.cells)
        for dr in range(-margin, margin + 1):
            for dc in range(-margin, margin + 1):
                gap_r = max(abs(dr) - 0.5, 0.0) * self.resolution
                gap_c = max(abs(dc) - 0.5, 0.0) * self.resolution
                if math.hypot(gap_r, gap_c) >= radius:
                    continue
                inflated |= padded[margin + dr:margin + dr + self.height,
                                   margin + dc:margin + dc + self.width]
        return OccupancyGrid(self.width, self.height, self.resolution, inflated, self.map_id)

    def to_text(self) -> str:
        lines = [f"{self.width} {self.height} {self.resolution!r}"]
        for row in self.cells:
            lines.append(''.join('#' if occupied else '.' for occupied in row))
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text: str, map_id: str = "map") -> 'OccupancyGrid':
        lines = [line.rstrip('\r') for line in text.split('\n')]
        while lines and lines[-1] == '':
            lines.pop()
        if not lines:
            raise MapFormatError("Empty map file")
        header = lines[0].split()
        if len(header) != 3:
            raise MapFormatError(f"Map header must be 'W H RES', got {lines[0]!r}")
        try:
            width, height, resolution = int(header[0]), int(header[1]), float(header[2])
        except ValueError:
            raise MapFormatError(f"Unparseable map header {lines[0]!r}")
        rows = lines[1:]
        if len(rows) != height:
            raise MapFormatError(f"Expected {height} map rows, got {len(rows)}")
        cells = []
        for r, row in enumerate(rows):
            if len(row) != width:
                raise MapFormatError(f"Row {r} has {len(row)} characters, expected {width}")
            for ch in row:
                if ch not in '#.':
                    raise MapFormatError(f"Invalid map character {ch!r} in row {r}")
                cells.append(ch == '#')
        return cls(width, height, resolution, cells, map_id)

    def save(self, path: str) -> None:
        with open(path, 'w', newline='\n') as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path: str) -> 'OccupancyGrid':
        map_id = os.path.splitext(os.path.basename(path))[0]
        try:
            with open(path, 'r') as f:
                return cls.from_text(f.read(), map_id)
        except OSError as e:
            raise MapFormatError(f"Cannot read map {path}: {e}")


def resolve_cell(grid: OccupancyGrid, point: Point) -> Cell:
    """Cell containing `point`, snapped to the nearest free cell within two cells"""
    cell = grid.point_to_cell(point)
    if grid.is_free(cell):
        return cell
    best = None
    row, col = cell
    for dr in range(-SNAP_RADIUS_CELLS, SNAP_RADIUS_CELLS + 1):
        for dc in range(-SNAP_RADIUS_CELLS, SNAP_RADIUS_CELLS + 1):
            candidate = (row + dr, col + dc)
            if not grid.is_free(candidate):
                continue
            key = (euclidean_distance(point, grid.cell_center(candidate)), grid.cell_index(candidate))
            if best is None or key < best[0]:
                best = (key, candidate)
    if best is None:
        raise GridQueryError(f"Point {point} lies in an obstacle with no free cell nearby")
    logger.debug(f"Snapped query point {point} to free cell {best[1]}")
    return best[1]


def _neighbours(grid: OccupancyGrid, cell: Cell):
    """8-connected moves; a diagonal is refused when both flanking axial cells are occupied"""
    row, col = cell
    for dr, dc in _AXIAL_MOVES:
        nxt = (row + dr, col + dc)
        if grid.is_free(nxt):
            yield nxt, False
    for dr, dc in _DIAGONAL_MOVES:
        nxt = (row + dr, col + dc)
        if not grid.is_free(nxt):
            continue
        if not grid.is_free((row + dr, col)) and not grid.is_free((row, col + dc)):
            continue
        yield nxt, True


class DistanceField:
    """Single-source shortest-path tree over the whole grid"""

    def __init__(self, grid: OccupancyGrid, source: Cell):
        self.grid = grid
        self.source = source
        n = grid.width * grid.height
        self.axial = np.full(n, -1, dtype=np.int64)
        self.diagonal = np.full(n, -1, dtype=np.int64)
        self.parent = np.full(n, -1, dtype=np.int64)
        self._run()

    def _run(self) -> None:
        grid = self.grid
        cost = {}
        src = grid.cell_index(self.source)
        cost[src] = 0.0
        self.axial[src] = 0
        self.diagonal[src] = 0
        done = set()
        heap = [(0.0, src)]
        while heap:
            c, idx = heapq.heappop(heap)
            if idx in done:
                continue
            done.add(idx)
            na, nd = int(self.axial[idx]), int(self.diagonal[idx])
            for nxt, is_diag in _neighbours(grid, grid.index_to_cell(idx)):
                nidx = grid.cell_index(nxt)
                if nidx in done:
                    continue
                ca, cd = (na, nd + 1) if is_diag else (na + 1, nd)
                new_cost = _step_cost(ca, cd)
                if new_cost < cost.get(nidx, math.inf):
                    cost[nidx] = new_cost
                    self.axial[nidx] = ca
                    self.diagonal[nidx] = cd
                    self.parent[nidx] = idx
                    heapq.heappush(heap, (new_cost, nidx))

    def reachable(self, cell: Cell) -> bool:
        return self.axial[self.grid.cell_index(cell)] >= 0

    def distance_to(self, cell: Cell) -> float:
        idx = self.grid.cell_index(cell)
        if self.axial[idx] < 0:
            return UNREACHABLE
        return self.grid.resolution * _step_cost(int(self.axial[idx]), int(self.diagonal[idx]))

    def distance_at(self, point: Point) -> float:
        return self.distance_to(resolve_cell(self.grid, point))

    def path_from(self, cell: Cell) -> List[Cell]:
        """Cells from `cell` back to the source along the tree"""
        idx = self.grid.cell_index(cell)
        if self.axial[idx] < 0:
            raise UnreachableError(f"Cell {cell} not connected to {self.source}")
        cells = []
        while idx >= 0:
            cells.append(self.grid.index_to_cell(idx))
            idx = int(self.parent[idx])
        return cells


@lru_cache(maxsize=256)
def _cached_field(grid: OccupancyGrid, source: Cell) -> DistanceField:
    return DistanceField(grid, source)


def distance_field(grid: OccupancyGrid, source: Point) -> DistanceField:
    return _cached_field(grid, resolve_cell(grid, source))


def _octile(a: Cell, b: Cell) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return _step_cost(max(dr, dc) - min(dr, dc), min(dr, dc))


@lru_cache(maxsize=65536)
def _cell_geodesic_steps(grid: OccupancyGrid, start: Cell, goal: Cell) -> Optional[Tuple[int, int]]:
    """A* over step counts with the octile heuristic; returns (axial, diagonal) or None"""
    if start == goal:
        return (0, 0)
    g_idx = grid.cell_index(goal)
    s_idx = grid.cell_index(start)
    steps = {s_idx: (0, 0)}
    cost = {s_idx: 0.0}
    closed = set()
    heap = [(_octile(start, goal), s_idx)]
    while heap:
        _, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        if idx == g_idx:
            return steps[idx]
        closed.add(idx)
        na, nd = steps[idx]
        cell = grid.index_to_cell(idx)
        for nxt, is_diag in _neighbours(grid, cell):
            nidx = grid.cell_index(nxt)
            if nidx in closed:
                continue
            ca, cd = (na, nd + 1) if is_diag else (na + 1, nd)
            new_cost = _step_cost(ca, cd)
            if new_cost < cost.get(nidx, math.inf):
                cost[nidx] = new_cost
                steps[nidx] = (ca, cd)
                heapq.heappush(heap, (new_cost + _octile(nxt, goal), nidx))
    return None


def geodesic_distance(grid: OccupancyGrid, a: Point, b: Point) -> float:
    """Shortest 8-connected path length between the cells containing a and b, or UNREACHABLE"""
    start, goal = resolve_cell(grid, a), resolve_cell(grid, b)
    # Canonical order keeps the cache symmetric.
    if grid.cell_index(goal) < grid.cell_index(start):
        start, goal = goal, start
    steps = _cell_geodesic_steps(grid, start, goal)
    if steps is None:
        return UNREACHABLE
    return grid.resolution * _step_cost(*steps)


def shortest_path(grid: OccupancyGrid, a: Point, b: Point) -> PathResult:
    """Dijkstra path between the cells of a and b; ties expand the lower cell index first"""
    start, goal = resolve_cell(grid, a), resolve_cell(grid, b)
    if start == goal:
        return PathResult((grid.cell_center(start),), 0.0)
    s_idx, g_idx = grid.cell_index(start), grid.cell_index(goal)
    steps = {s_idx: (0, 0)}
    cost = {s_idx: 0.0}
    parent = {s_idx: -1}
    closed = set()
    heap = [(0.0, s_idx)]
    while heap:
        _, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        closed.add(idx)
        if idx == g_idx:
            break
        na, nd = steps[idx]
        for nxt, is_diag in _neighbours(grid, grid.index_to_cell(idx)):
            nidx = grid.cell_index(nxt)
            if nidx in closed:
                continue
            ca, cd = (na, nd + 1) if is_diag else (na + 1, nd)
            new_cost = _step_cost(ca, cd)
            if new_cost < cost.get(nidx, math.inf):
                cost[nidx] = new_cost
                steps[nidx] = (ca, cd)
                parent[nidx] = idx
                heapq.heappush(heap, (new_cost, nidx))
    if g_idx not in closed:
        raise UnreachableError(f"No path between {a} and {b} on {grid!r}")
    cells = []
    idx = g_idx
    while idx >= 0:
        cells.append(grid.index_to_cell(idx))
        idx = parent[idx]
    cells.reverse()
    return PathResult(tuple(grid.cell_center(c) for c in cells),
                      grid.resolution * _step_cost(*steps[g_idx]))


def line_of_sight(grid: OccupancyGrid, source: Point, target: Point) -> bool:
    """True iff the closed segment touches no occupied cell (supercover semantics)"""
    for point in (source, target):
        if not grid.in_bounds(point):
            raise GridQueryError(f"Point {point} outside grid")
    # Canonical endpoint order makes the floating-point test symmetric.
    p, q = (source, target) if tuple(source) <= tuple(target) else (target, source)
    res = grid.resolution
    col_lo = int(math.floor(min(p[0], q[0]) / res))
    col_hi = int(math.floor(max(p[0], q[0]) / res))
    yb_lo = int(math.floor(min(p[1], q[1]) / res))
    yb_hi = int(math.floor(max(p[1], q[1]) / res))
    # Closed boxes: a segment lying on a cell edge also touches the neighbour cell.
    col_lo, yb_lo = max(col_lo - 1, 0), max(yb_lo - 1, 0)
    col_hi, yb_hi = min(col_hi + 1, grid.width - 1), min(yb_hi + 1, grid.height - 1)
    rows = slice(grid.height - 1 - yb_hi, grid.height - yb_lo)
    block = grid.cells[rows, col_lo:col_hi + 1]
    occ_r, occ_c = np.nonzero(block)
    if occ_r.size == 0:
        return True
    cols = occ_c + col_lo
    ybs = (grid.height - 1) - (occ_r + rows.start)
    x0, x1 = cols * res, (cols + 1) * res
    y0, y1 = ybs * res, (ybs + 1) * res
    t_enter = np.zeros(cols.size)
    t_exit = np.ones(cols.size)
    hit = np.ones(cols.size, dtype=bool)
    for origin, delta, lo, hi in ((p[0], q[0] - p[0], x0, x1), (p[1], q[1] - p[1], y0, y1)):
        if delta == 0.0:
            hit &= (lo <= origin) & (origin <= hi)
            continue
        ta = (lo - origin) / delta
        tb = (hi - origin) / delta
        t_enter = np.maximum(t_enter, np.minimum(ta, tb))
        t_exit = np.minimum(t_exit, np.maximum(ta, tb))
    hit &= t_enter <= t_exit
    return not bool(np.any(hit))
