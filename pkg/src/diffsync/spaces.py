"""Canonical/instance spaces: projection, unprojection and aggregation.

A :class:`ProjectionOperator` maps a canonical field to one instance view
through a nearest-neighbour gather table (``forward_map``). Unprojection
scatters a view back, averaging instance pixels that share a canonical
source, unless the operator carries an explicit ``inverse_map`` gather table
(inner-circle rotation can be built that way). :func:`aggregate` takes a
coverage-weighted mean of several unprojected views.

Multiplane operators treat the canonical state as ``M`` stacked slabs that
are mixed by ``mix_weights`` before the gather.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError, CoverageError

__all__ = [
    "CanonicalState",
    "ProjectionOperator",
    "project",
    "unproject",
    "aggregate",
    "reprojection_error",
    "make_permutation",
    "make_identity",
    "make_flip",
    "make_transpose",
    "make_rot90",
    "make_random_permutation",
    "make_crop",
    "make_crop_tiling",
    "make_inner_rotation",
    "make_multiplane",
]

KINDS = ("permutation", "crop", "inner_rotation", "multiplane")


@dataclass(frozen=True, eq=False)
class CanonicalState:
    """One slab (``single_slab``) or ``M`` equally shaped slabs (``multiplane``).

    ``slabs`` always carries the leading plane axis, so a single slab has
    shape ``(1, *shape)``.
    """

    slabs: np.ndarray
    kind: str = "single_slab"

    def __post_init__(self):
        slabs = np.asarray(self.slabs, dtype=np.float64)
        if slabs.ndim < 2 or slabs.shape[0] < 1:
            raise ContractError("slabs must have shape (M, *shape) with M >= 1")
        if self.kind not in ("single_slab", "multiplane"):
            raise ContractError(f"unknown canonical kind {self.kind!r}")
        if self.kind == "single_slab" and slabs.shape[0] != 1:
            raise ContractError("a single_slab state holds exactly one slab")
        object.__setattr__(self, "slabs", slabs)

    @classmethod
    def single(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values[None], "single_slab")

    @classmethod
    def planes(cls, slabs):
        return cls(slabs, "multiplane")

    def like(self, slabs):
        """A state of the same kind holding ``slabs``."""
        return CanonicalState(slabs, self.kind)

    @property
    def shape(self):
        return self.slabs.shape[1:]

    @property
    def n_planes(self):
        return self.slabs.shape[0]

    def render(self, weights=None):
        """Mix the slabs into one field (plain mean unless ``weights`` given)."""
        if weights is None:
            weights = np.full(self.n_planes, 1.0 / self.n_planes)
        return _mix(self.slabs, weights)


def _mix(slabs, weights):
    acc = weights[0] * slabs[0]
    for j in range(1, slabs.shape[0]):
        acc = acc + weights[j] * slabs[j]
    return acc


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """One projection ``f`` with its unprojection ``g``.

    ``forward_map[p]`` is the flat canonical index that instance pixel ``p``
    reads. ``inverse_map``, when present, is a gather table in the other
    direction (``-1`` marks canonical pixels a view does not see) and replaces
    the default scatter-mean unprojection.
    """

    kind: str
    canonical_shape: tuple
    instance_shape: tuple
    forward_map: np.ndarray
    inverse_map: np.ndarray = None
    mix_weights: np.ndarray = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown operator kind {self.kind!r}")
        cshape = tuple(int(s) for s in self.canonical_shape)
        ishape = tuple(int(s) for s in self.instance_shape)
        fmap = np.ascontiguousarray(self.forward_map, dtype=np.int64).ravel()
        csize = int(np.prod(cshape))
        if fmap.size != int(np.prod(ishape)):
            raise ContractError("forward_map length must equal the instance size")
        if fmap.size and (fmap.min() < 0 or fmap.max() >= csize):
            raise ContractError("forward_map index outside canonical bounds")
        fmap.setflags(write=False)
        object.__setattr__(self, "canonical_shape", cshape)
        object.__setattr__(self, "instance_shape", ishape)
        object.__setattr__(self, "forward_map", fmap)
        if self.inverse_map is not None:
            imap = np.ascontiguousarray(self.inverse_map, dtype=np.int64).ravel()
            if imap.size != csize or imap.max() >= fmap.size or imap.min() < -1:
                raise ContractError("inverse_map must index instance pixels (or -1) for every canonical pixel")
            imap.setflags(write=False)
            object.__setattr__(self, "inverse_map", imap)
        if self.kind == "permutation" and not self.is_bijective:
            raise ContractError("permutation operator needs a bijective forward_map")
        if self.kind == "multiplane":
            w = np.asarray(self.mix_weights, dtype=np.float64).ravel()
            if w.size < 1 or np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
                raise ContractError("mix_weights must be nonnegative and sum to 1")
            w.setflags(write=False)
            object.__setattr__(self, "mix_weights", w)
        elif self.mix_weights is not None:
            raise ContractError("only multiplane operators carry mix_weights")

    @property
    def n_planes(self):
        return 1 if self.mix_weights is None else self.mix_weights.size

    @property
    def canonical_kind(self):
        return "multiplane" if self.kind == "multiplane" else "single_slab"

    @cached_property
    def pullback_counts(self):
        """How many instance pixels read each canonical pixel (canonical shape)."""
        counts = np.bincount(self.forward_map, minlength=int(np.prod(self.canonical_shape)))
        return counts.reshape(self.canonical_shape)

    def pullback(self, index):
        """Flat instance indices that read canonical ``index`` (flat or tuple)."""
        if not np.isscalar(index):
            index = int(np.ravel_multi_index(tuple(index), self.canonical_shape))
        return np.flatnonzero(self.forward_map == index)

    @cached_property
    def is_bijective(self):
        n = self.forward_map.size
        if n != int(np.prod(self.canonical_shape)):
            return False
        if not np.array_equal(np.sort(self.forward_map), np.arange(n)):
            return False
        if self.inverse_map is None:
            return True
        inv = np.empty(n, dtype=np.int64)
        inv[self.forward_map] = np.arange(n)
        return np.array_equal(inv, self.inverse_map)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<ProjectionOperator {self.kind}{label} {self.canonical_shape}->{self.instance_shape}>"


def _as_state(z):
    return z if isinstance(z, CanonicalState) else CanonicalState.single(z)


def project(op, z):
    """Instance view ``f(z)``."""
    z = _as_state(z)
    if z.shape != op.canonical_shape or z.n_planes != op.n_planes:
        raise ContractError(
            f"canonical state {z.n_planes}x{z.shape} does not fit operator "
            f"{op.n_planes}x{op.canonical_shape}"
        )
    slab = z.slabs[0] if op.mix_weights is None else _mix(z.slabs, op.mix_weights)
    return slab.ravel()[op.forward_map].reshape(op.instance_shape)


def unproject(op, w):
    """Partial canonical state ``g(w)`` and its boolean coverage mask.

    Multiplane operators copy the unprojected slab to every plane, which is
    the minimum-norm set of planes whose weighted mean reproduces it.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != op.instance_shape:
        raise ContractError(f"view shape {w.shape} does not match {op.instance_shape}")
    size = int(np.prod(op.canonical_shape))
    if op.inverse_map is not None:
        mask = op.inverse_map >= 0
        values = np.where(mask, w.ravel()[np.maximum(op.inverse_map, 0)], 0.0)
    else:
        values, counts = _kernels.scatter_mean(np.ascontiguousarray(w.ravel()), op.forward_map, size)
        mask = counts > 0
    values = values.reshape(op.canonical_shape)
    mask = mask.reshape(op.canonical_shape)
    if op.kind == "multiplane":
        return CanonicalState.planes(np.repeat(values[None], op.n_planes, axis=0)), mask
    return CanonicalState.single(values), mask


def aggregate(partials, fill=None):
    """Per-index weighted mean of partial canonical states.

    ``partials`` holds ``(state, mask)`` or ``(state, mask, weight)`` tuples;
    ``weight`` is a scalar or a field over the slab shape (default 1).
    Contributions are summed in list order. An index no partial covers (or
    whose covering weights are all zero) raises :class:`CoverageError`
    unless ``fill`` supplies a value for it.
    """
    partials = list(partials)
    if not partials:
        raise ContractError("aggregate needs at least one partial")
    first = partials[0][0]
    num = np.zeros_like(first.slabs)
    den = np.zeros(first.shape)
    for item in partials:
        state, mask = item[0], item[1]
        weight = item[2] if len(item) > 2 and item[2] is not None else 1.0
        if state.slabs.shape != first.slabs.shape or state.kind != first.kind:
            raise ContractError("partials disagree on canonical shape")
        wm = np.where(mask, np.broadcast_to(np.asarray(weight, dtype=np.float64), mask.shape), 0.0)
        num = num + wm * state.slabs
        den = den + wm
    covered = den > 0.0
    if not np.all(covered):
        if fill is None:
            bad = np.argwhere(~covered)[0]
            raise CoverageError(bad)
        out = np.where(covered, num / np.where(covered, den, 1.0), fill)
        return first.like(out)
    return first.like(num / den)


def reprojection_error(op, w):
    """``||w - f(g(w))||_2`` for a single view."""
    w = np.asarray(w, dtype=np.float64)
    partial, _ = unproject(op, w)
    return float(np.linalg.norm(w - project(op, partial)))


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _shape2(shape, what="shape"):
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ConfigError(f"{what} must be a list of positive sizes")
    return shape


def make_permutation(shape, table, name=""):
    """Bijective operator from a gather table over the same grid."""
    shape = _shape2(shape)
    return ProjectionOperator("permutation", shape, shape, np.asarray(table).ravel(), name=name)


def _grid_op(shape, fn, name):
    shape = _shape2(shape)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    return make_permutation(shape, np.ascontiguousarray(fn(idx)), name)


def make_identity(shape):
    return _grid_op(shape, lambda i: i, "identity")


def make_flip(shape, axis=0):
    return _grid_op(shape, lambda i: np.flip(i, axis=axis), f"flip{axis}")


def make_transpose(shape):
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ConfigError("transpose needs a square 2-D grid")
    return _grid_op(shape, lambda i: i.T, "transpose")


def make_rot90(shape, k=1):
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ConfigError("rot90 needs a square 2-D grid")
    return _grid_op(shape, lambda i: np.rot90(i, k), f"rot90x{k % 4}")


def make_random_permutation(shape, seed):
    """Pixel shuffle drawn from a Philox stream keyed by ``seed``."""
    shape = _shape2(shape)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return make_permutation(shape, rng.permutation(int(np.prod(shape))), f"shuffle{seed}")


def make_crop(canvas_shape, origin, window):
    """Axis-aligned window of ``window`` size at ``origin`` in the canvas."""
    canvas_shape = _shape2(canvas_shape, "canvas")
    window = _shape2(window, "window")
    origin = tuple(int(o) for o in origin)
    if not (len(canvas_shape) == len(window) == len(origin)):
        raise ConfigError("canvas, window and origin need the same rank")
    if any(o < 0 or o + w > c for o, w, c in zip(origin, window, canvas_shape)):
        raise ConfigError(f"crop window at {origin} of size {window} leaves the canvas {canvas_shape}")
    idx = np.arange(int(np.prod(canvas_shape))).reshape(canvas_shape)
    sl = tuple(slice(o, o + w) for o, w in zip(origin, window))
    name = "crop@" + ",".join(str(o) for o in origin)
    return ProjectionOperator("crop", canvas_shape, window, idx[sl].ravel(), name=name)


def make_crop_tiling(canvas_shape, window, stride):
    """Windows at a fixed stride; the last window on each axis is flush with
    the canvas edge. Fails if some canvas pixel is left uncovered."""
    canvas_shape = _shape2(canvas_shape, "canvas")
    window = _shape2(window, "window")
    stride = tuple(int(s) for s in stride)
    if not (len(canvas_shape) == len(window) == len(stride)):
        raise ConfigError("canvas, window and stride need the same rank")
    if any(w > c for w, c in zip(window, canvas_shape)):
        raise ConfigError("window larger than canvas")
    if any(s < 1 for s in stride):
        raise ConfigError("stride entries must be positive")
    axes = []
    for c, w, s in zip(canvas_shape, window, stride):
        starts = list(range(0, c - w + 1, s))
        if starts[-1] + w < c:
            # stride leaves a gap before the canvas edge
            raise ConfigError(f"stride {s} with window {w} does not cover an axis of length {c}")
        axes.append(starts)
    origins = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(canvas_shape))
    ops = [make_crop(canvas_shape, o, window) for o in origins]
    covered = np.zeros(int(np.prod(canvas_shape)), dtype=bool)
    for op in ops:
        covered[op.forward_map] = True
    if not covered.all():
        raise ConfigError("crop tiling leaves canvas pixels uncovered")
    return ops


def make_inner_rotation(size, angle, unproject="mean"):
    """Rotate the pixels inside the inscribed circle by ``angle`` degrees.

    Nearest-neighbour sampling lets one canonical pixel feed several view
    pixels. ``unproject="mean"`` averages those on the way back;
    ``unproject="inverse"`` instead gathers with the inverse rotation.
    """
    size = _shape2(size, "size")
    if len(size) != 2 or size[0] != size[1]:
        raise ConfigError("inner rotation needs a square 2-D grid")
    if not 0.0 <= angle < 360.0:
        raise ConfigError("angle must lie in [0, 360)")
    h, w = size
    fmap = _kernels.rotation_source_table(h, w, float(angle))
    imap = None
    if unproject == "inverse":
        imap = _kernels.rotation_source_table(h, w, -float(angle))
    elif unproject != "mean":
        raise ConfigError(f"unknown unprojection mode {unproject!r}")
    return ProjectionOperator(
        "inner_rotation", size, size, fmap, inverse_map=imap,
        name=f"rot{angle:g}", meta={"angle": float(angle), "unproject": unproject},
    )


def make_multiplane(shape, M, transform):
    """Mix ``M`` planes uniformly, then apply ``transform``."""
    if int(M) != M or M < 1:
        raise ConfigError("number of planes must be a positive integer")
    if transform.kind == "multiplane":
        raise ConfigError("multiplane transforms cannot be nested")
    if tuple(shape) != transform.canonical_shape:
        raise ConfigError(f"plane shape {tuple(shape)} does not match transform {transform.canonical_shape}")
    M = int(M)
    return ProjectionOperator(
        "multiplane",
        transform.canonical_shape,
        transform.instance_shape,
        transform.forward_map,
        inverse_map=transform.inverse_map,
        mix_weights=np.full(M, 1.0 / M),
        name=f"mpi{M}:{transform.name}",
        meta={"transform": transform.kind},
    )
