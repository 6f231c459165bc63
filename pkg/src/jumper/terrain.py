"""Seeded 1D heightfield generators with a ten-level difficulty axis.

Five terrain families share one profile representation: a vector of cell
heights at fixed resolution, annotated with edge cells (discontinuities),
a spawn platform and a goal position. Difficulty level 0-9 maps to family
parameters through piecewise-linear interpolation between published anchor
rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

RESOLUTION_DEFAULT = 0.05    # m per cell; >= 2 cells across the smallest stone
EDGE_THRESHOLD = 0.05        # m; height jump that counts as an edge
NOISE_STEP = 0.02            # m; quantization granularity of rough-ground noise
PIT_DEPTH = 1.0              # m; depth of gap/stone pits
PLATFORM_WIDTH = 2.0         # m; leading (spawn) platform for every family
STAIR_PLATFORM_WIDTH = 3.0   # m; trailing platform after a stair section
SLOPE_LENGTH = 6.0           # m; horizontal run of the slope segment
MAX_LEVEL = 9


class TerrainKind(Enum):
    FLAT = "flat"
    ROUGH_GROUND = "rough_ground"
    SLOPE_STAIRS = "slope_stairs"
    WIDE_GAP = "wide_gap"
    STEPPING_STONE = "stepping_stone"


@dataclass(frozen=True)
class TerrainParams:
    """Family parameters at one difficulty level. Irrelevant fields stay zero."""

    slope_grade: float = 0.0
    stair_height: float = 0.0
    stair_width: float = 0.0
    noise_amplitude: float = 0.0
    gap_width: float = 0.0
    stone_size: float = 0.0
    stone_gap: float = 0.0
    platform_width: float = 0.0
    pit_depth: float = 0.0


@dataclass
class Heightfield:
    """Immutable 1D elevation profile with edge annotations."""

    resolution: float
    heights: np.ndarray
    extent: float
    goal_x: float
    edges: np.ndarray          # indices i where |heights[i+1]-heights[i]| >= EDGE_THRESHOLD
    spawn_x: float

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        self.heights.setflags(write=False)
        self.edges = np.asarray(self.edges, dtype=np.int64)
        self.edges.setflags(write=False)


# Stepping-stone anchors at levels 0, 5, 9: (gap, stone_size, stone_gap) in meters.
_STONE_ANCHORS = {
    0: (0.10, 0.50, 0.05),
    5: (0.35, 0.25, 0.15),
    9: (0.60, 0.125, 0.25),
}

_SLOPE_RANGE = (0.0, 0.2)
_STAIR_HEIGHT_RANGE = (0.05, 0.2)
_STAIR_WIDTH = 0.3
_NOISE_RANGE = (0.02, 0.1)
_GAP_RANGE = (0.10, 0.60)


def _check_level(level: int) -> int:
    if not isinstance(level, (int, np.integer)) or isinstance(level, bool):
        raise ValueError(f"level must be an integer, got {level!r}")
    if not 0 <= level <= MAX_LEVEL:
        raise ValueError(f"level must be in [0, {MAX_LEVEL}], got {level}")
    return int(level)


def _lerp(a: float, b: float, t: float) -> float:
    return a + (b - a) * t


def _stone_interp(level: int) -> tuple[float, float, float]:
    if level in _STONE_ANCHORS:
        return _STONE_ANCHORS[level]
    if level < 5:
        lo, hi, t = _STONE_ANCHORS[0], _STONE_ANCHORS[5], level / 5.0
    else:
        lo, hi, t = _STONE_ANCHORS[5], _STONE_ANCHORS[9], (level - 5) / 4.0
    return tuple(_lerp(a, b, t) for a, b in zip(lo, hi))


def level_params(kind: TerrainKind, level: int) -> TerrainParams:
    """Map (family, difficulty level) to generator parameters.

    Stepping-stone values interpolate piecewise-linearly between the anchor
    rows at levels 0, 5 and 9; the other families interpolate linearly over
    their published ranges.
    """
    level = _check_level(level)
    t = level / MAX_LEVEL
    if kind is TerrainKind.FLAT:
        return TerrainParams(platform_width=PLATFORM_WIDTH)
    if kind is TerrainKind.ROUGH_GROUND:
        return TerrainParams(
            noise_amplitude=_lerp(*_NOISE_RANGE, t),
            platform_width=PLATFORM_WIDTH,
        )
    if kind is TerrainKind.SLOPE_STAIRS:
        return TerrainParams(
            slope_grade=_lerp(*_SLOPE_RANGE, t),
            stair_height=_lerp(*_STAIR_HEIGHT_RANGE, t),
            stair_width=_STAIR_WIDTH,
            platform_width=PLATFORM_WIDTH,
        )
    if kind is TerrainKind.WIDE_GAP:
        return TerrainParams(
            gap_width=_lerp(*_GAP_RANGE, t),
            platform_width=PLATFORM_WIDTH,
            pit_depth=PIT_DEPTH,
        )
    if kind is TerrainKind.STEPPING_STONE:
        gap, stone, stone_gap = _stone_interp(level)
        return TerrainParams(
            gap_width=gap,
            stone_size=stone,
            stone_gap=stone_gap,
            platform_width=PLATFORM_WIDTH,
            pit_depth=PIT_DEPTH,
        )
    raise ValueError(f"unknown terrain kind {kind!r}")


def _cells(width_m: float, res: float) -> int:
    # round-half-up keeps the 0.125 m stone at 3 cells instead of banker's 2
    return int(np.floor(width_m / res + 0.5))


def _find_edges(heights: np.ndarray) -> np.ndarray:
    diffs = np.abs(np.diff(heights))
    return np.where(diffs >= EDGE_THRESHOLD - 1e-12)[0]


def generate(
    kind: TerrainKind,
    level: int,
    seed: int,
    extent: float = 20.0,
    resolution: float = RESOLUTION_DEFAULT,
) -> Heightfield:
    """Build a deterministic heightfield for (kind, level, seed, extent)."""
    params = level_params(kind, level)
    if extent < 2 * params.platform_width + 1.0:
        raise ValueError(
            f"extent {extent} too small; need >= {2 * params.platform_width + 1.0}"
        )
    res = resolution
    n = _cells(extent, res)
    heights = np.zeros(n, dtype=np.float64)
    rng = np.random.default_rng(seed)
    pw_cells = _cells(params.platform_width, res)
    goal_x = extent - params.platform_width / 2
    spawn_x = params.platform_width / 2

    if kind is TerrainKind.FLAT:
        pass

    elif kind is TerrainKind.ROUGH_GROUND:
        a = params.noise_amplitude
        mid = slice(pw_cells, n - pw_cells)
        noise = rng.uniform(-a, a, size=n)[mid]
        heights[mid] = np.round(noise / NOISE_STEP) * NOISE_STEP

    elif kind is TerrainKind.SLOPE_STAIRS:
        slope_cells = _cells(SLOPE_LENGTH, res)
        stair_cells = _cells(_STAIR_WIDTH, res)
        trail_cells = _cells(STAIR_PLATFORM_WIDTH, res)
        n_steps = (n - pw_cells - slope_cells - trail_cells) // stair_cells
        if n_steps < 1:
            raise ValueError(f"extent {extent} too small for a stair section")
        i = pw_cells
        xs = (np.arange(slope_cells) + 0.5) * res
        heights[i : i + slope_cells] = params.slope_grade * xs
        i += slope_cells
        top = params.slope_grade * SLOPE_LENGTH
        for k in range(n_steps):
            heights[i : i + stair_cells] = top + (k + 1) * params.stair_height
            i += stair_cells
        heights[i:] = top + n_steps * params.stair_height
        goal_x = extent - STAIR_PLATFORM_WIDTH / 2

    elif kind is TerrainKind.WIDE_GAP:
        gap_cells = _cells(params.gap_width, res)
        start = _cells(extent / 2 - params.gap_width / 2, res)
        heights[start : start + gap_cells] = -params.pit_depth

    elif kind is TerrainKind.STEPPING_STONE:
        stone_cells = _cells(params.stone_size, res)
        i = pw_cells
        while True:
            pit_w = params.stone_gap * (1.0 + rng.uniform(-0.2, 0.2))
            pit_cells = max(1, _cells(pit_w, res))
            if i + pit_cells + stone_cells > n - pw_cells:
                break
            heights[i : i + pit_cells] = -params.pit_depth
            i += pit_cells + stone_cells

    else:
        raise ValueError(f"unknown terrain kind {kind!r}")

    hf = Heightfield(
        resolution=res,
        heights=heights,
        extent=n * res,
        goal_x=goal_x,
        edges=_find_edges(heights),
        spawn_x=spawn_x,
    )
    return hf


def height_at(hf: Heightfield, x):
    """Terrain height at x (scalar or array), clamped to [0, extent].

    Linear interpolation between neighboring cell centers, except across an
    edge pair where nearest-cell (step) semantics keep stair faces vertical.
    """
    h = hf.heights
    nc = len(h)
    x_arr = np.asarray(x, dtype=np.float64)
    xq = np.clip(x_arr, 0.0, hf.extent)
    u = xq / hf.resolution - 0.5
    i0 = np.clip(np.floor(u), 0, nc - 1).astype(np.int64)
    i1 = np.minimum(i0 + 1, nc - 1)
    frac = np.clip(u - i0, 0.0, 1.0)
    h0 = h[i0]
    h1 = h[i1]
    lerped = h0 + (h1 - h0) * frac
    is_edge = np.abs(h1 - h0) >= EDGE_THRESHOLD - 1e-12
    boundary = (i0 + 1) * hf.resolution
    stepped = np.where(xq < boundary, h0, h1)
    out = np.where(is_edge, stepped, lerped)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def sample_heightmap(hf: Heightfield, center_x: float, offsets) -> np.ndarray:
    """Relative heights at center_x + offsets, measured from center height."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.size == 0:
        raise ValueError("offsets must be nonempty")
    return height_at(hf, center_x + offsets) - height_at(hf, center_x)


def edge_positions(hf: Heightfield) -> np.ndarray:
    """x coordinates of edge boundaries (between cell i and i+1)."""
    return (hf.edges + 1) * hf.resolution


def nearest_edge_distance(hf: Heightfield, x):
    """Horizontal distance to the nearest edge boundary; inf when no edges."""
    pos = edge_positions(hf)
    x_arr = np.asarray(x, dtype=np.float64)
    if pos.size == 0:
        out = np.full(x_arr.shape, np.inf)
    else:
        out = np.min(np.abs(x_arr[..., None] - pos), axis=-1)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def render_profile(hf: Heightfield) -> str:
    """Plain-text profile: header then one 'x height' pair per cell center."""
    lines = [
        f"# {hf.resolution:.6f} {hf.extent:.6f} {hf.goal_x:.6f} {hf.spawn_x:.6f}"
    ]
    for i, h in enumerate(hf.heights):
        x = (i + 0.5) * hf.resolution
        lines.append(f"{x:.6f} {h:.6f}")
    return "\n".join(lines) + "\n"
