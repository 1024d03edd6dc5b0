"""Block-structured local refinement.

All levels share one time step. Every patch is solved on its own padded grid
with ghost values taken from the composite of its level: valid values of
same-level patches where they exist, prolonged coarser data elsewhere. After
each step fine data is averaged down onto the coarse cells it covers.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import config
from .exceptions import CheckpointError, ConfigValidationError
from .grid import EdgeField, centered_gradient
from .integrators import WaveState

logger = logging.getLogger(__name__)

STATE_FIELDS = ("p_prev", "p_curr", "lam_prev", "lam")


@dataclass(frozen=True)
class SensorThresholds:
    """Tagging thresholds plus buffer, tile granularity, box efficiency and regrid cadence.

    A threshold of ``inf`` disables its sensor.
    """

    tau_emb: float = config.DEFAULT_TAU_EMB
    tau_pml: float = config.DEFAULT_TAU_PML
    tau_sol: float = config.DEFAULT_TAU_SOL
    buffer_cells: int = config.DEFAULT_BUFFER_CELLS
    regrid_interval: int = config.DEFAULT_REGRID_INTERVAL
    tile: int = config.DEFAULT_TILE
    efficiency: float = config.DEFAULT_GRID_EFFICIENCY

    def __post_init__(self):
        for name in ("tau_emb", "tau_pml", "tau_sol"):
            if not getattr(self, name) > 0:
                raise ConfigValidationError(f"amr.{name} must be positive", invariant=f"amr.{name}>0")
        if self.buffer_cells < 0:
            raise ConfigValidationError("amr.buffer_cells must be >= 0", invariant="amr.buffer_cells>=0")
        if self.regrid_interval < 1:
            raise ConfigValidationError("amr.regrid_interval must be >= 1", invariant="amr.regrid_interval>=1")
        if self.tile < 1:
            raise ConfigValidationError("amr.tile must be >= 1", invariant="amr.tile>=1")
        if not 0 < self.efficiency <= 1:
            raise ConfigValidationError("amr.efficiency must lie in (0, 1]", invariant="amr.efficiency")

    @classmethod
    def never(cls):
        return cls(math.inf, math.inf, math.inf)


@dataclass(frozen=True)
class Box:
    """Cell index rectangle ``[i0, i1) x [j0, j1)`` of one level."""

    i0: int
    j0: int
    i1: int
    j1: int

    def __post_init__(self):
        if self.i1 <= self.i0 or self.j1 <= self.j0:
            raise ValueError(f"empty box {self}")

    @property
    def shape(self):
        return (self.i1 - self.i0, self.j1 - self.j0)

    @property
    def slices(self):
        return (slice(self.i0, self.i1), slice(self.j0, self.j1))

    def grow(self, cells, shape):
        """Box enlarged by ``cells`` on every side, clipped to a level of ``shape``."""
        return Box(
            max(self.i0 - cells, 0),
            max(self.j0 - cells, 0),
            min(self.i1 + cells, shape[0]),
            min(self.j1 + cells, shape[1]),
        )

    def intersect(self, other):
        i0, j0 = max(self.i0, other.i0), max(self.j0, other.j0)
        i1, j1 = min(self.i1, other.i1), min(self.j1, other.j1)
        if i1 <= i0 or j1 <= j0:
            return None
        return Box(i0, j0, i1, j1)

    def overlaps(self, other):
        return self.intersect(other) is not None

    def union(self, other):
        return Box(
            min(self.i0, other.i0), min(self.j0, other.j0), max(self.i1, other.i1), max(self.j1, other.j1)
        )

    def contains(self, other):
        return self.i0 <= other.i0 and self.j0 <= other.j0 and self.i1 >= other.i1 and self.j1 >= other.j1

    def refine(self, ratio):
        return Box(self.i0 * ratio, self.j0 * ratio, self.i1 * ratio, self.j1 * ratio)

    def local(self, outer):
        """Slices of this box inside the arrays of ``outer``."""
        return (slice(self.i0 - outer.i0, self.i1 - outer.i0), slice(self.j0 - outer.j0, self.j1 - outer.j0))


# ── Sensors and clustering ───────────────────────────────────


def smooth(field, sweeps=config.SENSOR_SMOOTHING_SWEEPS):
    """Nearest-neighbour averaging sweeps over the 5-point star."""
    kernel = np.array([[0.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 0.0]]) / 5.0
    for _ in range(sweeps):
        field = ndimage.convolve(field, kernel, mode="nearest")
    return field


def compute_sensors(psi, pml_mask, p, grid, sweeps=config.SENSOR_SMOOTHING_SWEEPS):
    """Embedding, damping-layer and solution sensors on one level.

    Returns ``(eta_emb, eta_pml, eta_sol)``: the gradient magnitude of ``psi``,
    the damping mask and the undivided gradient magnitude of ``p``.
    """
    gx, gy = centered_gradient(psi, grid)
    eta_emb = np.hypot(gx, gy)
    eta_pml = np.asarray(pml_mask, dtype=float)
    ux, uy = centered_gradient(p, grid)
    eta_sol = np.hypot(ux * grid.hx, uy * grid.hy)
    return smooth(eta_emb, sweeps), smooth(eta_pml, sweeps), smooth(eta_sol, sweeps)


def tag_cells(sensors, thresholds):
    eta_emb, eta_pml, eta_sol = sensors
    ratio = np.maximum.reduce(
        [eta_emb / thresholds.tau_emb, eta_pml / thresholds.tau_pml, eta_sol / thresholds.tau_sol]
    )
    return ratio > 1.0


def cluster(tags, buffer_cells=config.DEFAULT_BUFFER_CELLS, tile=config.DEFAULT_TILE, parents=None,
            nesting=config.NESTING_BUFFER, efficiency=config.DEFAULT_GRID_EFFICIENCY):
    """Rectangles covering the buffered tags.

    Each connected group of tags is boxed and split until its boxes are
    filled to ``efficiency``. With ``parents`` every rectangle is cut to the
    parent boxes shrunk by ``nesting`` cells (not at the domain boundary).
    """
    shape = tags.shape
    if not tags.any():
        return []
    grown = tags
    if buffer_cells > 0:
        grown = ndimage.binary_dilation(tags, structure=np.ones((3, 3), dtype=bool), iterations=buffer_cells)
    labels, _ = ndimage.label(grown, structure=np.ones((3, 3), dtype=int))
    boxes = []
    for index, s in enumerate(ndimage.find_objects(labels), start=1):
        box = Box(s[0].start, s[1].start, s[0].stop, s[1].stop)
        boxes.extend(split_box(box, labels == index, efficiency))
    boxes = _merge_overlapping([_align(b, tile, shape) for b in boxes])
    if parents is not None:
        boxes = _nest(boxes, parents, shape, nesting)
    return sorted(boxes, key=lambda b: (b.i0, b.j0))


def tag_and_cluster(sensors, thresholds, parents=None):
    """Tag cells whose sensors exceed their thresholds and cluster them into patches."""
    return cluster(tag_cells(sensors, thresholds), thresholds.buffer_cells, thresholds.tile, parents,
                   efficiency=thresholds.efficiency)


def _shrink_to_tags(box, tags):
    sub = tags[box.slices]
    rows = np.flatnonzero(sub.any(axis=1))
    cols = np.flatnonzero(sub.any(axis=0))
    return Box(box.i0 + rows[0], box.j0 + cols[0], box.i0 + rows[-1] + 1, box.j0 + cols[-1] + 1)


def _cut(signature, min_size):
    """Cut index and its score along one signature, or None.

    Empty rows score highest, then the largest jump of the discrete Laplacian.
    """
    n = signature.size
    positions = range(min_size, n - min_size + 1)
    if not positions:
        return None
    middle = n / 2.0
    holes = [k for k in positions if signature[k - 1] == 0 or signature[k] == 0]
    if holes:
        k = min(holes, key=lambda k: abs(k - middle))
        return k, math.inf
    lap = np.zeros(n)
    lap[1:-1] = signature[:-2] - 2.0 * signature[1:-1] + signature[2:]
    best = max(positions, key=lambda k: (abs(lap[k] - lap[k - 1]), -abs(k - middle)))
    return best, abs(lap[best] - lap[best - 1])


def split_box(box, tags, efficiency=config.DEFAULT_GRID_EFFICIENCY, min_size=config.MIN_BOX_SIZE):
    """Bisect ``box`` until every piece is filled with tags to ``efficiency``.

    Cuts follow empty rows or columns of the tag signatures first, then
    inflection points, then the middle of the longer side.
    """
    if not tags[box.slices].any():
        return []
    box = _shrink_to_tags(box, tags)
    sub = tags[box.slices]
    if sub.mean() >= efficiency or max(box.shape) < 2 * min_size:
        return [box]
    cuts = []
    for axis in (0, 1):
        found = _cut(sub.sum(axis=1 - axis).astype(float), min_size)
        if found is not None:
            cuts.append((found[1], box.shape[axis], axis, found[0]))
    if not cuts:
        return [box]
    score, _, axis, k = max(cuts)
    if score == 0.0:
        axis = 0 if box.shape[0] >= box.shape[1] else 1
        k = box.shape[axis] // 2
    if axis == 0:
        halves = (Box(box.i0, box.j0, box.i0 + k, box.j1), Box(box.i0 + k, box.j0, box.i1, box.j1))
    else:
        halves = (Box(box.i0, box.j0, box.i1, box.j0 + k), Box(box.i0, box.j0 + k, box.i1, box.j1))
    return [piece for half in halves for piece in split_box(half, tags, efficiency, min_size)]


def _align(box, tile, shape):
    if tile == 1:
        return box
    return Box(
        (box.i0 // tile) * tile,
        (box.j0 // tile) * tile,
        min(-(-box.i1 // tile) * tile, shape[0]),
        min(-(-box.j1 // tile) * tile, shape[1]),
    )


def _merge_overlapping(boxes):
    boxes = list(boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if boxes[i].overlaps(boxes[j]):
                    boxes[i] = boxes[i].union(boxes.pop(j))
                    merged = True
                    break
            if merged:
                break
    return boxes


def _shrink_inside(box, cells, shape):
    i0 = box.i0 if box.i0 == 0 else box.i0 + cells
    j0 = box.j0 if box.j0 == 0 else box.j0 + cells
    i1 = box.i1 if box.i1 == shape[0] else box.i1 - cells
    j1 = box.j1 if box.j1 == shape[1] else box.j1 - cells
    if i1 <= i0 or j1 <= j0:
        return None
    return Box(i0, j0, i1, j1)


def _nest(boxes, parents, shape, nesting):
    inner = [b for b in (_shrink_inside(p, nesting, shape) for p in parents) if b is not None]
    out = []
    for box in boxes:
        for parent in inner:
            cut = box.intersect(parent)
            if cut is not None:
                out.append(cut)
    return out


def is_properly_nested(boxes, parents, shape, nesting=config.NESTING_BUFFER):
    """True if every box (parent index space) lies in one shrunk parent box."""
    inner = [b for b in (_shrink_inside(p, nesting, shape) for p in parents) if b is not None]
    return all(any(parent.contains(box) for parent in inner) for box in boxes)


# ── Transfer operators ───────────────────────────────────────


def _lerp_axis(values, coords, axis):
    """Linear interpolation along ``axis`` at fractional indices, extrapolating at the ends."""
    n = values.shape[axis]
    base = np.clip(np.floor(coords).astype(int), 0, n - 2)
    weight = coords - base
    shape = [1] * values.ndim
    shape[axis] = -1
    weight = weight.reshape(shape)
    return (1.0 - weight) * np.take(values, base, axis=axis) + weight * np.take(values, base + 1, axis=axis)


def _centre_coords(fine_count, ratio):
    return (np.arange(fine_count) + 0.5) / ratio - 0.5


def _face_coords(fine_count, ratio):
    return (np.arange(fine_count) + 1.0) / ratio - 1.0


def prolong(coarse, ratio=config.REFINEMENT_RATIO):
    """Bilinear coarse-to-fine interpolation of cell data or of each edge family."""
    if ratio < 2:
        raise ValueError("refinement ratio must be at least 2")
    if isinstance(coarse, EdgeField):
        nx, ny = coarse.y.shape[0] * ratio, coarse.x.shape[1] * ratio
        x = _lerp_axis(_lerp_axis(coarse.x, _face_coords(nx - 1, ratio), 0), _centre_coords(ny, ratio), 1)
        y = _lerp_axis(_lerp_axis(coarse.y, _centre_coords(nx, ratio), 0), _face_coords(ny - 1, ratio), 1)
        return EdgeField(x, y)
    nx, ny = coarse.shape
    return _lerp_axis(
        _lerp_axis(coarse, _centre_coords(nx * ratio, ratio), 0), _centre_coords(ny * ratio, ratio), 1
    )


def restrict(fine, ratio=config.REFINEMENT_RATIO):
    """Mean of the child cells, or of the aligned fine edges of each coarse edge."""
    if isinstance(fine, EdgeField):
        nx, ny = fine.y.shape[0] // ratio, fine.x.shape[1] // ratio
        x = fine.x[ratio - 1::ratio, :].reshape(nx - 1, ny, ratio).mean(axis=2)
        y = fine.y[:, ratio - 1::ratio].reshape(nx, ratio, ny - 1).mean(axis=1)
        return EdgeField(x, y)
    nx, ny = fine.shape
    if nx % ratio or ny % ratio:
        raise ValueError(f"fine shape {fine.shape} is not divisible by {ratio}")
    return fine.reshape(nx // ratio, ratio, ny // ratio, ratio).mean(axis=(1, 3))


def covered_cells(fine_mask, ratio=config.REFINEMENT_RATIO):
    """Coarse cells all of whose children are set in ``fine_mask``."""
    nx, ny = fine_mask.shape
    return fine_mask.reshape(nx // ratio, ratio, ny // ratio, ratio).all(axis=(1, 3))


def covered_edges(cells):
    """Edges whose two adjacent cells are both covered."""
    return cells[:-1, :] & cells[1:, :], cells[:, :-1] & cells[:, 1:]


# ── Patches ──────────────────────────────────────────────────


class Patch:
    """Valid box of one level together with its ghost-padded local grid and state."""

    def __init__(self, level, box, level_grid, ghost=config.GHOST_WIDTH):
        self.level = level
        self.box = box
        self.padded = box.grow(ghost, level_grid.shape)
        self.grid = level_grid.subgrid(self.padded.i0, self.padded.j0, self.padded.i1, self.padded.j1)
        self.valid = np.zeros(self.grid.shape, dtype=bool)
        self.valid[box.local(self.padded)] = True
        self.valid_xedge = self.valid[:-1, :] | self.valid[1:, :]
        self.valid_yedge = self.valid[:, :-1] | self.valid[:, 1:]
        self.coeffs = None
        self.stepper = None
        self.state = None
        self.emb = None

    def __repr__(self):
        b = self.box
        return f"<Patch level={self.level} [{b.i0}:{b.i1}, {b.j0}:{b.j1}]>"

    @property
    def has_ghosts(self):
        return not self.valid.all()

    @property
    def edge_slices(self):
        """Slices of the padded x-edges and y-edges in level edge arrays."""
        p = self.padded
        return (slice(p.i0, p.i1 - 1), slice(p.j0, p.j1)), (slice(p.i0, p.i1), slice(p.j0, p.j1 - 1))

    def gather(self, values):
        """Copy of the padded region of a level-wide array."""
        if isinstance(values, EdgeField):
            xs, ys = self.edge_slices
            return EdgeField(values.x[xs].copy(), values.y[ys].copy())
        return values[self.padded.slices].copy()

    def scatter(self, values, out):
        """Write this patch's valid values into a level-wide array."""
        if isinstance(values, EdgeField):
            xs, ys = self.edge_slices
            out.x[xs][self.valid_xedge] = values.x[self.valid_xedge]
            out.y[ys][self.valid_yedge] = values.y[self.valid_yedge]
        else:
            out[self.padded.slices][self.valid] = values[self.valid]

    def merge_ghosts(self, own, level_values):
        """Own valid values, ghost values from the level composite."""
        ghost = self.gather(level_values)
        if isinstance(own, EdgeField):
            return EdgeField(
                np.where(self.valid_xedge, own.x, ghost.x), np.where(self.valid_yedge, own.y, ghost.y)
            )
        return np.where(self.valid, own, ghost)


# ── Hierarchy ────────────────────────────────────────────────


class LevelHierarchy:
    """Nested levels of patches advanced with one shared time step.

    ``physics`` supplies the per-grid pieces of a run::

        physics.coefficients(grid)      -> PmlCoefficients
        physics.embedding(grid, t)      -> EmbeddingField
        physics.source(grid, t)         -> averaged source for the step leaving t
        physics.initial_state(grid)     -> WaveState at step 1
        physics.stepper(grid, coeffs)   -> embedded stepper

    Level 0 is one patch covering the domain.
    """

    def __init__(self, base_grid, physics, thresholds=None, max_level=config.DEFAULT_MAX_LEVEL,
                 ratio=config.REFINEMENT_RATIO, ghost=config.GHOST_WIDTH, workers=1):
        if not 0 <= max_level <= config.MAX_LEVEL_LIMIT:
            raise ConfigValidationError(
                f"amr.max_level must lie in [0, {config.MAX_LEVEL_LIMIT}]", invariant="amr.max_level"
            )
        if ratio < 2:
            raise ConfigValidationError("amr.ratio must be at least 2", invariant="amr.ratio>=2")
        self.physics = physics
        self.thresholds = thresholds or SensorThresholds()
        self.max_level = max_level
        self.ratio = ratio
        self.ghost = ghost
        self.workers = max(1, int(workers))
        self.grids = [base_grid.refined(ratio**level) if level else base_grid for level in range(max_level + 1)]
        self.levels = []
        self.layout_log = []
        self.solved_states = []
        self._damping_masks = {}

    # ── Accessors ──

    @property
    def base(self):
        return self.levels[0][0]

    @property
    def finest_level(self):
        return len(self.levels) - 1

    @property
    def t(self):
        return self.base.state.t

    @property
    def n(self):
        return self.base.state.n

    @property
    def patches(self):
        return [patch for level in self.levels for patch in level]

    def layout_rows(self, n=None):
        """``(n, level, i0, j0, i1, j1)`` for every patch."""
        n = self.n if n is None else n
        return [(n, p.level, p.box.i0, p.box.j0, p.box.i1, p.box.j1) for p in self.patches]

    def last_iterations(self):
        return sum(p.stepper.last_report.iterations for p in self.patches if p.stepper.last_report)

    # ── Construction ──

    def _make_patch(self, level, box):
        patch = Patch(level, box, self.grids[level], self.ghost)
        patch.coeffs = self.physics.coefficients(patch.grid)
        patch.stepper = self.physics.stepper(patch.grid, patch.coeffs)
        return patch

    def initialize(self):
        """Level 0 from the initial data, then the initial refinement."""
        grid = self.grids[0]
        base = self._make_patch(0, Box(0, 0, grid.nx, grid.ny))
        base.state = self.physics.initial_state(base.grid)
        base.emb = self.physics.embedding(base.grid, base.state.t)
        self.levels = [[base]]
        self.regrid(initial=True)
        return self

    def set_level(self, level, boxes, initial=False):
        """Replace the patches of ``level`` by ``boxes`` (level index space).

        New data comes from the initial condition when ``initial`` is set,
        otherwise from the current level composite so persistent cells keep
        their values.
        """
        if not boxes:
            del self.levels[level:]
            return
        fields = None
        if not initial:
            fields = {name: self.composites(name, level)[level] for name in STATE_FIELDS}

        t, n = self.t, self.n
        patches = []
        for box in boxes:
            patch = self._make_patch(level, box)
            if fields is None:
                patch.state = self.physics.initial_state(patch.grid)
            else:
                patch.state = WaveState(*(patch.gather(fields[name]) for name in STATE_FIELDS), t, n)
            patch.emb = self.physics.embedding(patch.grid, t)
            patches.append(patch)
        if level < len(self.levels):
            self.levels[level] = patches
        else:
            self.levels.append(patches)

    # ── Composites ──

    def composites(self, name, upto=None):
        """Level-wide arrays of one state field, finest valid data first."""
        upto = self.finest_level if upto is None else upto
        out = []
        for level in range(upto + 1):
            patches = self.levels[level] if level < len(self.levels) else []
            if level == 0:
                values = getattr(self.base.state, name).copy()
            else:
                values = prolong(out[-1], self.ratio)
                for patch in patches:
                    patch.scatter(getattr(patch.state, name), values)
            out.append(values)
        return out

    def valid_mask(self, level):
        grid = self.grids[level]
        mask = np.zeros(grid.shape, dtype=bool)
        for patch in self.levels[level]:
            mask[patch.box.slices] = True
        return mask

    def exclusive_masks(self):
        """Per level, the valid cells not covered by a finer level."""
        masks = []
        for level in range(len(self.levels)):
            mask = self.valid_mask(level)
            if level + 1 < len(self.levels):
                mask &= ~covered_cells(self.valid_mask(level + 1), self.ratio)
            masks.append(mask)
        return masks

    # ── Ghosts ──

    def fill_ghosts(self, level, fields=None):
        """Refresh the ghost values of every patch on ``level``.

        ``fields`` maps state field names to level-wide arrays and defaults to
        the current composites.
        """
        if fields is None:
            fields = {name: self.composites(name, level)[level] for name in STATE_FIELDS}
        for patch in self.levels[level]:
            if not patch.has_ghosts:
                continue
            s = patch.state
            patch.state = WaveState(
                *(patch.merge_ghosts(getattr(s, name), fields[name]) for name in STATE_FIELDS), s.t, s.n
            )

    # ── Time stepping ──

    def advance(self):
        """Advance every level by one step, then average fine data down."""
        old = {name: self.composites(name) for name in STATE_FIELDS}
        coarse_next = None
        for level, patches in enumerate(self.levels):
            self.fill_ghosts(level, {name: values[level] for name, values in old.items()})
            ghost_next = None if level == 0 else prolong(coarse_next, self.ratio)
            self._advance_patches(patches, ghost_next)
            level_next = self.base.state.p_curr.copy() if level == 0 else ghost_next.copy()
            for patch in patches:
                patch.scatter(patch.state.p_curr, level_next)
            coarse_next = level_next
        # States as solved, before fine data overwrite covered coarse cells
        self.solved_states = [[patch.state for patch in patches] for patches in self.levels]
        self.average_down()
        logger.debug("hierarchy step %d: %d patches on %d levels", self.n, len(self.patches), len(self.levels))

    def _advance_patches(self, patches, ghost_next):
        def advance(patch):
            state = patch.state
            frozen = None
            if ghost_next is not None and patch.has_ghosts:
                frozen = (patch.valid, patch.gather(ghost_next))
            t_next = state.t + patch.stepper.tau
            emb_next = self.physics.embedding(patch.grid, t_next)
            f = self.physics.source(patch.grid, state.t)
            patch.state = patch.stepper.step(state, emb_next, f=f, frozen=frozen)
            patch.emb = emb_next

        if self.workers > 1 and len(patches) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                # list() re-raises the first patch error
                list(pool.map(advance, patches))
        else:
            for patch in patches:
                advance(patch)

    def average_down(self):
        """Replace covered coarse values of ``p`` and ``lambda`` by fine averages."""
        for level in range(self.finest_level, 0, -1):
            fine_p = self.composites("p_curr", level)[level]
            fine_lam = self.composites("lam", level)[level]
            coarse_p = restrict(fine_p, self.ratio)
            coarse_lam = restrict(fine_lam, self.ratio)
            cells = covered_cells(self.valid_mask(level), self.ratio)
            xedges, yedges = covered_edges(cells)
            for patch in self.levels[level - 1]:
                s = patch.state
                xs, ys = patch.edge_slices
                mask = patch.valid & cells[patch.padded.slices]
                xmask = patch.valid_xedge & xedges[xs]
                ymask = patch.valid_yedge & yedges[ys]
                p_curr = np.where(mask, patch.gather(coarse_p), s.p_curr)
                lam_coarse = patch.gather(coarse_lam)
                lam = EdgeField(np.where(xmask, lam_coarse.x, s.lam.x), np.where(ymask, lam_coarse.y, s.lam.y))
                patch.state = WaveState(s.p_prev, p_curr, s.lam_prev, lam, s.t, s.n)

    # ── Regridding ──

    def damping_mask(self, level):
        if level not in self._damping_masks:
            self._damping_masks[level] = self.physics.coefficients(self.grids[level]).damped_cells()
        return self._damping_masks[level]

    def sensors(self, level):
        grid = self.grids[level]
        emb = self.physics.embedding(grid, self.t)
        p = self.composites("p_curr", level)[level]
        return compute_sensors(emb.psi_cell, self.damping_mask(level), p, grid)

    def regrid(self, initial=False):
        """Rebuild levels 1..L from the sensors of their parents.

        Returns True if the layout changed. Unchanged levels keep their patches
        and data untouched.
        """
        changed = False
        level = 0
        while level < self.max_level and level < len(self.levels):
            parents = None if level == 0 else [p.box for p in self.levels[level]]
            boxes = tag_and_cluster(self.sensors(level), self.thresholds, parents)
            fine = [box.refine(self.ratio) for box in boxes]
            current = [p.box for p in self.levels[level + 1]] if level + 1 < len(self.levels) else []
            if fine != current:
                self.set_level(level + 1, fine, initial=initial)
                changed = True
                logger.info("regrid at step %d: level %d has %d patches", self.n, level + 1, len(fine))
            level += 1
        self.layout_log.extend(self.layout_rows())
        return changed

    def due_for_regrid(self, n):
        return self.max_level > 0 and n % self.thresholds.regrid_interval == 0

    # ── Checkpoint support ──

    def patch_records(self):
        """Box, padded grid and state arrays of every patch, coarse levels first."""
        return [
            {
                "level": p.level,
                "box": (p.box.i0, p.box.j0, p.box.i1, p.box.j1),
                "grid": p.grid,
                "p_prev": p.state.p_prev,
                "p_curr": p.state.p_curr,
                "lam_prev": p.state.lam_prev,
                "lam": p.state.lam,
            }
            for p in self.patches
        ]

    def load_records(self, records, t, n):
        """Rebuild the hierarchy from ``patch_records`` output."""
        levels = []
        for record in records:
            level = record["level"]
            if level > self.max_level:
                raise ConfigValidationError(
                    f"stored level {level} exceeds max_level {self.max_level}", invariant="amr.max_level"
                )
            while len(levels) <= level:
                levels.append([])
            patch = self._make_patch(level, Box(*record["box"]))
            if patch.grid.shape != record["p_curr"].shape:
                raise CheckpointError(f"stored patch {patch!r} has shape {record['p_curr'].shape}")
            patch.state = WaveState(*(record[name] for name in STATE_FIELDS), t, n)
            patch.emb = self.physics.embedding(patch.grid, t)
            levels[level].append(patch)
        self.levels = levels
        return self


# ── Operation-level entry points ─────────────────────────────


def advance_hierarchy(hierarchy, steps=1):
    """Advance ``hierarchy`` by ``steps`` shared time steps; returns it."""
    for _ in range(steps):
        hierarchy.advance()
    return hierarchy
