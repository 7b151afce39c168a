"""Point cloud rendering: surface samples of object boxes plus floor and walls."""

from __future__ import annotations

import numpy as np

from .scene import Scene

# name -> rgb in [0, 1]
COLOR_TABLE: dict[str, tuple[float, float, float]] = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.15),
    "blue": (0.1, 0.2, 0.9),
    "yellow": (0.95, 0.9, 0.1),
    "white": (0.98, 0.98, 0.98),
    "black": (0.05, 0.05, 0.05),
    "brown": (0.55, 0.32, 0.12),
    "purple": (0.6, 0.15, 0.75),
}

FLOOR_RGB = (0.62, 0.60, 0.55)
WALL_RGB = (0.80, 0.80, 0.76)

COLOR_NOISE = 0.015
MIN_OBJECT_POINTS = 16
OBJECT_POINT_SHARE = 0.65   # fraction of N spent on object surfaces
MIN_VOLUME_FOR_QUOTA = 0.01


def nearest_color(rgb) -> str:
    """Name of the table color closest (L2) to ``rgb``."""
    rgb = np.asarray(rgb, float)
    names = list(COLOR_TABLE)
    table = np.array([COLOR_TABLE[n] for n in names])
    return names[int(np.argmin(((table - rgb) ** 2).sum(axis=1)))]


def _box_surface_points(rng, center, size, count: int) -> np.ndarray:
    """Uniform samples on the visible faces of a box, weighted by area.

    The bottom face is skipped: objects rest on the floor, so those points
    would coincide with floor points.
    """
    size = np.asarray(size, float)
    areas = np.array([
        size[1] * size[2], size[1] * size[2],   # x faces
        size[0] * size[2], size[0] * size[2],   # y faces
        0.0, size[0] * size[1],                 # z faces (bottom hidden)
    ])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, size=(count, 3))
    pts = u * size
    axis = faces // 2
    sign = np.where(faces % 2 == 0, -0.5, 0.5)
    pts[np.arange(count), axis] = sign * size[axis]
    return pts + np.asarray(center, float)


def _surface_area(size) -> float:
    sx, sy, sz = size
    return 2.0 * (sx * sy + sy * sz + sx * sz)


def render_point_cloud(scene: Scene, n_points: int, seed: int | None = None) -> np.ndarray:
    """Render ``n_points`` xyz+rgb samples from the scene.

    Object points get the object's table color plus small noise (still nearest
    to the true color); the remainder lands on floor and walls.  Objects with
    volume >= 0.01 m^3 are guaranteed at least 16 points, every object gets at
    least one.  Deterministic in (scene, n_points, seed); ``seed`` defaults to
    the scene's stored cloud seed.
    """
    if n_points < 512:
        raise ValueError(f"n_points must be >= 512, got {n_points}")
    if seed is None:
        seed = scene.cloud_seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_points]))

    objs = scene.objects
    budget = int(round(n_points * OBJECT_POINT_SHARE))
    areas = np.array([_surface_area(o.size) for o in objs])
    raw = areas / areas.sum() * budget
    counts = np.maximum(raw.astype(int), 1)
    for i, o in enumerate(objs):
        if float(np.prod(o.size)) >= MIN_VOLUME_FOR_QUOTA:
            counts[i] = max(counts[i], MIN_OBJECT_POINTS)
    # trim proportionally if the minimums pushed us over budget
    while counts.sum() > budget and counts.max() > MIN_OBJECT_POINTS:
        counts[int(np.argmax(counts))] -= 1

    pieces = []
    colors = []
    for o, cnt in zip(objs, counts):
        pts = _box_surface_points(rng, o.center, o.size, int(cnt))
        rgb = np.tile(np.array(COLOR_TABLE[o.color_name]), (int(cnt), 1))
        pieces.append(pts)
        colors.append(rgb)

    n_bg = n_points - int(counts.sum())
    room = scene.extent[1]
    n_floor = n_bg // 2
    n_wall = n_bg - n_floor
    floor = np.column_stack([
        rng.uniform(0, room[0], n_floor),
        rng.uniform(0, room[1], n_floor),
        np.zeros(n_floor),
    ])
    pieces.append(floor)
    colors.append(np.tile(np.array(FLOOR_RGB), (n_floor, 1)))

    # four walls, weighted by area
    wall_areas = np.array([room[1] * room[2], room[1] * room[2],
                           room[0] * room[2], room[0] * room[2]])
    which = rng.choice(4, size=n_wall, p=wall_areas / wall_areas.sum())
    wx = rng.uniform(0, room[0], n_wall)
    wy = rng.uniform(0, room[1], n_wall)
    wz = rng.uniform(0, room[2], n_wall)
    walls = np.column_stack([wx, wy, wz])
    walls[which == 0, 0] = 0.0
    walls[which == 1, 0] = room[0]
    walls[which == 2, 1] = 0.0
    walls[which == 3, 1] = room[1]
    pieces.append(walls)
    colors.append(np.tile(np.array(WALL_RGB), (n_wall, 1)))

    xyz = np.concatenate(pieces)
    rgb = np.concatenate(colors)
    rgb = np.clip(rgb + rng.normal(0.0, COLOR_NOISE, rgb.shape), 0.0, 1.0)
    cloud = np.concatenate([xyz, rgb], axis=1)
    perm = rng.permutation(n_points)
    return cloud[perm]
