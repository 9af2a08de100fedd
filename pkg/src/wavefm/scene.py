"""Procedural urban scenes: height maps, occupancy patches, LOS tests,
and corridor-constrained mask selection around the TX-RX segment.

Coordinates are meters with the origin at the grid's top-left corner;
x runs along columns, y along rows (downwards), z is height. The base
station sits at the top-center of the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .profiles import BUILDING_HEIGHT_RANGE, Profile

OCCUPANCY_THRESHOLD = 0.6  # strict: occupied iff coverage > 0.6


@dataclass
class Building:
    """Axis-aligned block occupying whole grid cells [r0:r1, c0:c1)."""

    r0: int
    c0: int
    r1: int
    c1: int
    height: float

    def bounds_m(self, cell_m):
        return (
            self.c0 * cell_m,
            self.r0 * cell_m,
            self.c1 * cell_m,
            self.r1 * cell_m,
        )


@dataclass
class SceneMap:
    height: np.ndarray  # (N, N) meters
    cell_m: float
    bs_position: np.ndarray  # (3,) meters
    scene_id: int
    buildings: list = field(default_factory=list)

    @property
    def grid_n(self):
        return self.height.shape[0]

    @property
    def extent_m(self):
        return self.grid_n * self.cell_m

    def in_bounds(self, point):
        x, y = point[0], point[1]
        return 0.0 <= x <= self.extent_m and 0.0 <= y <= self.extent_m

    def height_at(self, x, y):
        n = self.grid_n
        c = min(max(int(x / self.cell_m), 0), n - 1)
        r = min(max(int(y / self.cell_m), 0), n - 1)
        return self.height[r, c]


@dataclass
class OccupancyGrid:
    grid: np.ndarray  # (P, P) uint8
    patch_cells: int
    cell_m: float

    @property
    def patches_per_side(self):
        return self.grid.shape[0]

    @property
    def patch_m(self):
        return self.patch_cells * self.cell_m

    def patch_centers_m(self):
        p = self.patches_per_side
        coords = (np.arange(p) + 0.5) * self.patch_m
        xs, ys = np.meshgrid(coords, coords)  # row-major: index = r * p + c
        return np.stack([xs.ravel(), ys.ravel()], axis=1)


@dataclass
class CorridorMask:
    ordered_indices: np.ndarray  # all patch indices sorted by distance
    distances: np.ndarray  # distance per patch index (unsorted)
    candidate_indices: np.ndarray  # within the final expansion radius
    masked_indices: np.ndarray  # selected subset, |masked| = round(ratio * P^2)
    target_ratio: float
    radius_m: float


def bs_position_for(profile: Profile):
    """Top-center of the grid at the profile's mast height."""
    return np.array(
        [profile.extent_m / 2.0, profile.cell_m / 2.0, profile.bs_height_m]
    )


def generate_scene(rng_seed, profile: Profile, density, scene_id=0):
    """Drop axis-aligned rectangular buildings until ~`density` of the
    area is built. Overlaps keep the taller block. Deterministic in seed."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    rng = np.random.default_rng(rng_seed)
    n = profile.grid_n
    height = np.zeros((n, n), dtype=np.float64)
    buildings = []
    lo, hi = profile.building_side_cells
    h_lo, h_hi = BUILDING_HEIGHT_RANGE
    total = n * n
    # keep the mast cell and its ring clear so the feed is never walled in
    bs_col = n // 2
    clear_r, clear_c = (0, 2), (max(bs_col - 1, 0), min(bs_col + 2, n))
    for _ in range(10_000):
        if np.count_nonzero(height) / total >= density:
            break
        w = int(rng.integers(lo, hi + 1))
        d = int(rng.integers(lo, hi + 1))
        r0 = int(rng.integers(0, n - d + 1))
        c0 = int(rng.integers(0, n - w + 1))
        if r0 < clear_r[1] and c0 < clear_c[1] and c0 + w > clear_c[0]:
            continue
        h = float(rng.uniform(h_lo, h_hi))
        block = height[r0 : r0 + d, c0 : c0 + w]
        np.maximum(block, h, out=block)
        buildings.append(Building(r0, c0, r0 + d, c0 + w, h))
    return SceneMap(
        height=height,
        cell_m=profile.cell_m,
        bs_position=bs_position_for(profile),
        scene_id=scene_id,
        buildings=buildings,
    )


def build_occupancy(scene: SceneMap, patch_cells):
    """Binary patch grid: 1 iff building coverage strictly exceeds 60%."""
    n = scene.grid_n
    if n % patch_cells != 0:
        raise ValueError(f"patch_cells {patch_cells} does not divide grid {n}")
    p = n // patch_cells
    built = (scene.height > 0.0).astype(np.float64)
    coverage = built.reshape(p, patch_cells, p, patch_cells).mean(axis=(1, 3))
    return OccupancyGrid(
        grid=(coverage > OCCUPANCY_THRESHOLD).astype(np.uint8),
        patch_cells=patch_cells,
        cell_m=scene.cell_m,
    )


def los_blocked(scene: SceneMap, tx, rx):
    """2.5-D blockage test: True iff some cell's building height exceeds the
    segment height there. Sampled at <= half-cell steps, symmetric in tx/rx."""
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    if not (scene.in_bounds(tx) and scene.in_bounds(rx)):
        raise ValueError("LOS endpoints must lie inside the scene bounds")
    horiz = float(np.hypot(rx[0] - tx[0], rx[1] - tx[1]))
    steps = max(int(np.ceil(horiz / (scene.cell_m / 2.0))), 1)
    t = np.linspace(0.0, 1.0, steps + 1)
    xs = tx[0] + t * (rx[0] - tx[0])
    ys = tx[1] + t * (rx[1] - tx[1])
    zs = tx[2] + t * (rx[2] - tx[2])
    n = scene.grid_n
    cols = np.clip((xs / scene.cell_m).astype(int), 0, n - 1)
    rows = np.clip((ys / scene.cell_m).astype(int), 0, n - 1)
    return bool(np.any(scene.height[rows, cols] > zs))


def _segment_distances(points, a, b):
    """Distance from each 2-D point to segment [a, b]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def corridor_mask(occupancy: OccupancyGrid, tx_xy, rx_xy, ratio, rng):
    """Pick scene patches to mask near the TX-RX segment.

    Patches are ranked by the perpendicular distance of their centers to the
    segment; the admission radius starts at one patch diagonal and grows by
    one diagonal until enough candidates exist, then the `count` nearest
    candidates are taken, breaking distance ties uniformly at random.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    centers = occupancy.patch_centers_m()
    total = len(centers)
    count = max(int(round(ratio * total)), 1)
    dist = _segment_distances(centers, tx_xy, rx_xy)
    diag = occupancy.patch_m * np.sqrt(2.0)
    radius = diag
    while np.count_nonzero(dist <= radius) < count and radius < 4.0 * occupancy.patch_m * occupancy.patches_per_side:
        radius += diag
    candidates = np.flatnonzero(dist <= radius)
    jitter = rng.random(total)  # random tie-break among equidistant patches
    order = np.lexsort((jitter, dist))
    ordered_candidates = order[np.isin(order, candidates)]
    masked = np.sort(ordered_candidates[:count])
    return CorridorMask(
        ordered_indices=order,
        distances=dist,
        candidate_indices=candidates,
        masked_indices=masked,
        target_ratio=ratio,
        radius_m=radius,
    )


def sample_user_positions(scene: SceneMap, count, rng, user_height_m):
    """Uniform user drops over non-built cells (position uniform in-cell)."""
    free_r, free_c = np.nonzero(scene.height == 0.0)
    if len(free_r) == 0:
        raise ValueError("scene has no free cells to place users")
    picks = rng.integers(0, len(free_r), size=count)
    jitter = rng.random((count, 2))
    xs = (free_c[picks] + jitter[:, 0]) * scene.cell_m
    ys = (free_r[picks] + jitter[:, 1]) * scene.cell_m
    zs = np.full(count, user_height_m)
    return np.stack([xs, ys, zs], axis=1)
