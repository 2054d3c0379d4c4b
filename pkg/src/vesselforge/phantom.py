"""Procedural tube and branching-vessel phantoms with analytic ground truth.

A tube is the volume swept by a disk of radius ``r(t)`` along a polyline
centreline.  The two end caps are flat; interior joints are rounded by a
sphere of the local radius so that bends stay closed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mesh.core import TriMesh
from .volume import VoxelGrid


class PhantomError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Centerline:
    points: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        rad = np.broadcast_to(np.asarray(self.radii, dtype=float), (len(pts),)).copy()
        if len(pts) < 2:
            raise PhantomError("a centreline needs at least 2 samples")
        if np.any(rad <= 0):
            raise PhantomError("radii must be positive")
        if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
            raise PhantomError("consecutive centreline samples must be distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "radii", rad)

    @classmethod
    def straight(cls, start, end, radius):
        return cls(np.array([start, end], float), radius)

    @classmethod
    def arc(cls, center, bend_radius, start_angle, end_angle, radius, samples=48, normal_axis=2):
        """Circular arc in the plane orthogonal to ``normal_axis``."""
        ang = np.linspace(start_angle, end_angle, samples)
        a, b = [ax for ax in range(3) if ax != normal_axis]
        pts = np.tile(np.asarray(center, float), (samples, 1))
        pts[:, a] += bend_radius * np.cos(ang)
        pts[:, b] += bend_radius * np.sin(ang)
        return cls(pts, radius)

    def tangent(self, end):
        """Unit tangent pointing out of the tube at ``end`` ('start' or 'end')."""
        if end == "start":
            d = self.points[0] - self.points[1]
        else:
            d = self.points[-1] - self.points[-2]
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class Cap:
    center: tuple
    radius: float
    axis: tuple


@dataclass(frozen=True)
class InletOutletSpec:
    caps: tuple
    buffer: float = 1.0

    def __post_init__(self):
        if len(self.caps) < 1:
            raise PhantomError("at least one cap is required")
        if any(c.radius <= 0 for c in self.caps):
            raise PhantomError("cap radii must be positive")
        if self.buffer <= 0:
            raise PhantomError("buffer width must be positive")

    @property
    def centers(self):
        return np.array([c.center for c in self.caps], float)

    @property
    def radii(self):
        return np.array([c.radius for c in self.caps], float)

    def to_dict(self):
        return {
            "buffer": self.buffer,
            "caps": [
                {"center": list(c.center), "radius": c.radius, "axis": list(c.axis)} for c in self.caps
            ],
        }

    @classmethod
    def from_dict(cls, d):
        caps = tuple(Cap(tuple(c["center"]), float(c["radius"]), tuple(c["axis"])) for c in d["caps"])
        return cls(caps, float(d.get("buffer", 1.0)))


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    spacing: tuple = (1.0, 1.0, 1.0)
    centerlines: tuple = ()
    foreground: float = 400.0
    background: float = 50.0
    noise_sd: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0
    origin: tuple = (0.0, 0.0, 0.0)
    cap_buffer: float = 1.0

    def __post_init__(self):
        for name in ("foreground", "background"):
            v = getattr(self, name)
            if not 0 <= v <= 500:
                raise PhantomError(f"{name} intensity {v} outside [0, 500]")
        if self.noise_sd < 0 or self.blur_sigma < 0:
            raise PhantomError("noise_sd and blur_sigma must be non-negative")

    def empty_grid(self):
        return VoxelGrid(np.zeros(self.dims), self.spacing, self.origin)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "foreground", "background", "noise_sd", "blur_sigma", "seed", "cap_buffer")}
        d["dims"] = [int(n) for n in self.dims]
        d["spacing"] = [float(x) for x in self.spacing]
        d["origin"] = [float(x) for x in self.origin]
        d["centerlines"] = [
            {"points": cl.points.tolist(), "radii": cl.radii.tolist()} for cl in self.centerlines
        ]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cls_ = tuple(Centerline(c["points"], c["radii"]) for c in d.pop("centerlines", ()))
        for k in ("dims", "spacing", "origin"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(centerlines=cls_, **d)


# ---------------------------------------------------------------------------
# signed distance


def _segment_sdf(p, a, b, ra, rb):
    # flat-ended cylinder (cone for ra != rb, radius taken at the projection)
    d = b - a
    length = np.linalg.norm(d)
    u = d / length
    x = (p - a) @ u
    r = ra + (rb - ra) * np.clip(x / length, 0.0, 1.0)
    radial = np.linalg.norm(p - a - np.outer(x, u), axis=1)
    q = radial - r
    h = np.maximum(-x, x - length)
    return np.minimum(np.maximum(q, h), 0.0) + np.hypot(np.maximum(q, 0.0), np.maximum(h, 0.0))


def centerline_sdf(points, cl: Centerline):
    """Signed distance (negative inside) from ``points`` (N, 3) to the tube around ``cl``."""
    p = np.asarray(points, float).reshape(-1, 3)
    n = len(cl.points)
    best = np.full(len(p), np.inf)
    for i in range(n - 1):
        best = np.minimum(best, _segment_sdf(p, cl.points[i], cl.points[i + 1], cl.radii[i], cl.radii[i + 1]))
    for i in range(1, n - 1):
        best = np.minimum(best, np.linalg.norm(p - cl.points[i], axis=1) - cl.radii[i])
    if n > 2:
        # joint spheres near the ends must not poke through the flat caps
        for end, idx in (("start", 0), ("end", -1)):
            best = np.maximum(best, (p - cl.points[idx]) @ cl.tangent(end))
    return best


def phantom_sdf(points, centerlines):
    return np.min([centerline_sdf(points, cl) for cl in centerlines], axis=0)


# ---------------------------------------------------------------------------
# generation


def _check_inside(spec: PhantomSpec, margin_voxels=3):
    lo = np.asarray(spec.origin) + margin_voxels * np.asarray(spec.spacing)
    hi = np.asarray(spec.origin) + (np.asarray(spec.dims) - 1 - margin_voxels) * np.asarray(spec.spacing)
    for k, cl in enumerate(spec.centerlines):
        tang = np.gradient(cl.points, axis=0)
        tang /= np.linalg.norm(tang, axis=1, keepdims=True)
        # extent of the swept disk along each axis
        reach = cl.radii[:, None] * np.sqrt(np.clip(1.0 - tang ** 2, 0.0, 1.0))
        ext_lo = (cl.points - reach).min(0)
        ext_hi = (cl.points + reach).max(0)
        if np.any(ext_lo < lo) or np.any(ext_hi > hi):
            raise PhantomError(f"centreline {k} leaves the grid (needs a {margin_voxels}-voxel margin)")


def _label(spec: PhantomSpec):
    grid = spec.empty_grid()
    pts = grid.coordinates().reshape(-1, 3)
    sdf = phantom_sdf(pts, spec.centerlines).reshape(spec.dims)
    return grid.with_data((sdf <= 0).astype(float))


def _cap(cl: Centerline, end, buffer):
    idx = 0 if end == "start" else -1
    return Cap(tuple(map(float, cl.points[idx])), float(cl.radii[idx]), tuple(map(float, cl.tangent(end))))


def corrupt(image: VoxelGrid, noise_sd: float, blur_sigma: float, seed: int, clip_hi: float = 500.0):
    """Gaussian blur (sigma in voxels) then i.i.d. Gaussian noise, clamped to [0, clip_hi]."""
    if noise_sd < 0 or blur_sigma < 0:
        raise PhantomError("noise_sd and blur_sigma must be non-negative")
    data = image.data
    if blur_sigma > 0:
        data = ndimage.gaussian_filter(data, blur_sigma, mode="nearest")
    if noise_sd > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, noise_sd, size=data.shape)
    if blur_sigma > 0 or noise_sd > 0:
        data = np.clip(data, 0.0, clip_hi)
    return image.with_data(data)


def _render(spec: PhantomSpec, label: VoxelGrid):
    clean = label.with_data(spec.background + (spec.foreground - spec.background) * label.data)
    return corrupt(clean, spec.noise_sd, spec.blur_sigma, spec.seed)


def make_tube_phantom(spec: PhantomSpec):
    if len(spec.centerlines) != 1:
        raise PhantomError("a tube phantom takes exactly one centreline")
    _check_inside(spec)
    label = _label(spec)
    cl = spec.centerlines[0]
    io = InletOutletSpec((_cap(cl, "start", spec.cap_buffer), _cap(cl, "end", spec.cap_buffer)), spec.cap_buffer)
    return _render(spec, label), label, io


def make_branching_phantom(spec: PhantomSpec):
    """First centreline is the trunk, the rest are side branches rooted inside it."""
    if len(spec.centerlines) < 2:
        raise PhantomError("a branching phantom needs a trunk and at least one branch")
    trunk, branches = spec.centerlines[0], spec.centerlines[1:]
    for k, br in enumerate(branches):
        if br.radii.max() >= trunk.radii.min():
            raise PhantomError(f"branch {k} radius must be below the trunk radius")
    _check_inside(spec)
    label = _label(spec)
    caps = [_cap(trunk, "start", spec.cap_buffer), _cap(trunk, "end", spec.cap_buffer)]
    caps += [_cap(br, "end", spec.cap_buffer) for br in branches]
    return _render(spec, label), label, InletOutletSpec(tuple(caps), spec.cap_buffer)


def make_phantom(spec: PhantomSpec):
    if len(spec.centerlines) == 1:
        return make_tube_phantom(spec)
    return make_branching_phantom(spec)


# ---------------------------------------------------------------------------
# analytic surface


def _frames(points):
    """Parallel-transport frames along a polyline."""
    tang = np.gradient(points, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    seed = np.eye(3)[np.argmin(np.abs(tang[0]))]
    n = np.cross(tang[0], seed)
    n /= np.linalg.norm(n)
    normals = [n]
    for i in range(1, len(points)):
        n = n - (n @ tang[i]) * tang[i]
        n /= np.linalg.norm(n)
        normals.append(n)
    normals = np.array(normals)
    return tang, normals, np.cross(tang, normals)


def _resample_polyline(cl: Centerline, step):
    seg = np.linalg.norm(np.diff(cl.points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(int(np.ceil(s[-1] / step)), 1) + 1
    si = np.linspace(0.0, s[-1], n)
    pts = np.column_stack([np.interp(si, s, cl.points[:, a]) for a in range(3)])
    rad = np.interp(si, s, cl.radii)
    return pts, rad


def analytic_surface(spec: PhantomSpec, segments=None, step=None) -> TriMesh:
    """Watertight triangulation of a single tube's boundary with flat caps."""
    if len(spec.centerlines) != 1:
        raise PhantomError("analytic_surface supports single-centreline phantoms")
    cl = spec.centerlines[0]
    h = min(spec.spacing)
    step = step or 0.5 * h
    rmax = cl.radii.max()
    if segments is None:
        segments = max(24, int(np.ceil(2 * np.pi * rmax / step)))
    pts, rad = _resample_polyline(cl, step)
    if len(pts) < 2:
        raise PhantomError("degenerate centreline")
    tang, nrm, bin_ = _frames(pts)
    theta = 2 * np.pi * np.arange(segments) / segments
    ring_dir = np.cos(theta)[None, :, None] * nrm[:, None, :] + np.sin(theta)[None, :, None] * bin_[:, None, :]
    body = pts[:, None, :] + rad[:, None, None] * ring_dir
    n_rings = len(pts)
    verts = [body.reshape(-1, 3)]
    faces = []
    ring = lambda i: i * segments + np.arange(segments)
    for i in range(n_rings - 1):
        a, b = ring(i), ring(i + 1)
        a1, b1 = np.roll(a, -1), np.roll(b, -1)
        faces.append(np.column_stack([a, a1, b1]))
        faces.append(np.column_stack([a, b1, b]))
    n_body = n_rings * segments

    def add_cap(ring_idx, center, radius, frame_n, frame_b, outward, offset):
        n_inner = max(int(np.ceil(radius / step)) - 1, 0)
        cap_verts = []
        rings = [ring(ring_idx)]
        for k in range(n_inner, 0, -1):
            rr = radius * k / (n_inner + 1)
            cap_verts.append(center + rr * (np.cos(theta)[:, None] * frame_n + np.sin(theta)[:, None] * frame_b))
        start = offset
        for k in range(n_inner):
            rings.append(start + k * segments + np.arange(segments))
        centre_idx = start + n_inner * segments
        cap_verts.append(center[None, :])
        cf = []
        for k in range(len(rings) - 1):
            a, b = rings[k], rings[k + 1]
            a1, b1 = np.roll(a, -1), np.roll(b, -1)
            cf.append(np.column_stack([a, a1, b1]))
            cf.append(np.column_stack([a, b1, b]))
        last = rings[-1]
        cf.append(np.column_stack([last, np.roll(last, -1), np.full(segments, centre_idx)]))
        cf = np.concatenate(cf)
        # orient to the outward cap axis
        v_all = np.concatenate(verts + [np.concatenate(cap_verts)])
        f0 = cf[0]
        nrm0 = np.cross(v_all[f0[1]] - v_all[f0[0]], v_all[f0[2]] - v_all[f0[0]])
        if nrm0 @ outward < 0:
            cf = cf[:, ::-1]
        return np.concatenate(cap_verts), cf

    cap0_v, cap0_f = add_cap(0, pts[0], rad[0], nrm[0], bin_[0], -tang[0], n_body)
    verts.append(cap0_v)
    cap1_v, cap1_f = add_cap(n_rings - 1, pts[-1], rad[-1], nrm[-1], bin_[-1], tang[-1], n_body + len(cap0_v))
    verts.append(cap1_v)
    body_faces = np.concatenate(faces)
    v_all = np.concatenate(verts)
    # body orientation: normal should point away from the axis
    f0 = body_faces[0]
    nrm0 = np.cross(v_all[f0[1]] - v_all[f0[0]], v_all[f0[2]] - v_all[f0[0]])
    if nrm0 @ (v_all[f0[0]] - pts[0]) < 0:
        body_faces = body_faces[:, ::-1]
    return TriMesh(v_all, np.concatenate([body_faces, cap0_f, cap1_f]))


# ---------------------------------------------------------------------------
# stock configurations


def straight_tube_spec(radius=4.0, dims=(64, 64, 64), axis=0, margin=6.0, **kw) -> PhantomSpec:
    c = (np.asarray(dims, float) - 1) / 2.0
    a = c.copy()
    b = c.copy()
    a[axis] = margin
    b[axis] = dims[axis] - 1 - margin
    return PhantomSpec(dims=tuple(dims), centerlines=(Centerline.straight(a, b, radius),), **kw)


def branching_spec(trunk_radius=6.0, branch_radius=3.0, n_branches=3, dims=(64, 64, 64), **kw) -> PhantomSpec:
    """Trunk along x with side branches alternating along +y / -y and +z."""
    c = (np.asarray(dims, float) - 1) / 2.0
    trunk = Centerline.straight((8.0, c[1], c[2]), (dims[0] - 9.0, c[1], c[2]), trunk_radius)
    dirs = [np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0]), np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]
    xs = np.linspace(16.0, dims[0] - 17.0, n_branches)
    branches = []
    for k in range(n_branches):
        d = dirs[k % len(dirs)]
        start = np.array([xs[k], c[1], c[2]])
        end = start + d * (min(dims[1], dims[2]) / 2.0 - 5.0 - branch_radius)
        branches.append(Centerline.straight(start, end, branch_radius))
    return PhantomSpec(dims=tuple(dims), centerlines=(trunk, *branches), **kw)


def random_vessel_spec(seed, dims=(64, 64, 64), noise_sd=10.0, blur_sigma=0.0) -> PhantomSpec:
    """Randomized straight tube or branching tree for training and held-out sets."""
    rng = np.random.default_rng(seed)
    kw = dict(noise_sd=noise_sd, blur_sigma=blur_sigma, seed=int(rng.integers(2 ** 31)))
    if rng.random() < 0.5:
        radius = float(rng.uniform(3.0, 7.0))
        axis = int(rng.integers(3))
        c = (np.asarray(dims, float) - 1) / 2.0
        a, b = c.copy(), c.copy()
        others = [k for k in range(3) if k != axis]
        a[others] += rng.uniform(-6, 6, 2)
        b[others] += rng.uniform(-6, 6, 2)
        a[axis] = 8.0
        b[axis] = dims[axis] - 9.0
        return PhantomSpec(dims=tuple(dims), centerlines=(Centerline.straight(a, b, radius),), **kw)
    return branching_spec(
        trunk_radius=float(rng.uniform(5.0, 7.0)),
        branch_radius=float(rng.uniform(2.5, 4.0)),
        n_branches=int(rng.integers(1, 4)),
        dims=dims,
        **kw,
    )
