"""Projective camera model, Plucker-ray algebra, triangulation and epipolar initialization.

Conventions used throughout the package:
  * world units are millimeters, image units are pixels
  * extrinsics are world-to-camera: x_cam = R @ x_world + t
  * rotations are stored as axis-angle 3-vectors (radians), angle in [0, pi]
  * a Plucker ray is (direction n, moment l) with |n| = 1 and l = p x n for
    any point p on the ray; point-line distance is ||x x n - l||
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .exceptions import (
    CheiralityAmbiguity,
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NoConsensus,
    PointBehindCamera,
)
from .validation import as_array, check_finite

_EPS = 1e-12


# ------------------------------
# Axis-angle rotations (Rodrigues) with analytic Jacobian
# ------------------------------

def _sinc_coeffs(theta):
    """Return a = sin(t)/t and b = (1-cos(t))/t^2, series-expanded near zero."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < 1e-4
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    return a, b


def _sinc_coeff_derivs(theta):
    """Return a'(t)/t and b'(t)/t for the Rodrigues coefficients above."""
    theta = np.asarray(theta, dtype=np.float64)
    small = theta < 1e-3
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        ap = np.where(
            small,
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            (theta * np.cos(theta) - np.sin(theta)) / safe**3,
        )
        bp = np.where(
            small,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
            (theta * np.sin(theta) - 2.0 * (1.0 - np.cos(theta))) / safe**4,
        )
    return ap, bp


def skew(v):
    """Cross-product matrix [v]_x, batched over leading dims."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_to_matrix(r):
    """Rodrigues formula, batched: (..., 3) -> (..., 3, 3)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    a, b = _sinc_coeffs(theta)
    k = skew(r)
    k2 = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * k2


def matrix_to_axis_angle(m):
    """Inverse of axis_angle_to_matrix; angle canonicalized to [0, pi]."""
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    rv = _ScipyRotation.from_matrix(m.reshape(-1, 3, 3)).as_rotvec()
    return rv[0] if single else rv.reshape(m.shape[:-2] + (3,))


def rotation_jacobian(r):
    """dR/dr for the Rodrigues map, batched: (..., 3) -> (..., 3, 3, 3).

    Output axis -3 indexes the axis-angle component, i.e. out[..., i, :, :]
    is the partial derivative of R with respect to r_i.
    """
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    a, b = _sinc_coeffs(theta)
    ap, bp = _sinc_coeff_derivs(theta)
    k = skew(r)
    k2 = k @ k
    eyes = np.eye(3)
    # dK/dr_i is the constant basis matrix [e_i]_x
    e_basis = skew(eyes)  # (3, 3, 3)

    da = ap[..., None] * r  # (..., 3)
    db = bp[..., None] * r

    out = np.zeros(r.shape[:-1] + (3, 3, 3))
    for i in range(3):
        ei = e_basis[i]
        out[..., i, :, :] = (
            da[..., i, None, None] * k
            + a[..., None, None] * ei
            + db[..., i, None, None] * k2
            + b[..., None, None] * (ei @ k + k @ ei)
        )
    return out


def canonical_axis_angle(r):
    """Wrap an axis-angle vector so its angle lies in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    theta = float(np.linalg.norm(r))
    if theta <= np.pi or theta < _EPS:
        return r.copy()
    wrapped = theta % (2.0 * np.pi)
    if wrapped > np.pi:
        wrapped -= 2.0 * np.pi
    return r * (wrapped / theta)


def relative_to(ext, ref):
    """Re-express a world-to-camera transform in the frame of `ref`'s camera.

    Both transforms must share one world frame; the result maps points in
    ref's camera frame to ext's camera frame.
    """
    r_v = axis_angle_to_matrix(ext.rotation)
    r_0 = axis_angle_to_matrix(ref.rotation)
    rot = r_v @ r_0.T
    trans = ext.translation - rot @ ref.translation
    return Extrinsics(matrix_to_axis_angle(rot), trans)


# ------------------------------
# Camera model
# ------------------------------

@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self):
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Extrinsics:
    """World-to-camera rigid transform as axis-angle rotation + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", canonical_axis_angle(as_array(self.rotation, (3,), "rotation")))
        object.__setattr__(self, "translation", as_array(self.translation, (3,), "translation"))
        check_finite(self.rotation, "rotation")
        check_finite(self.translation, "translation")

    @staticmethod
    def identity():
        return Extrinsics(np.zeros(3), np.zeros(3))

    def matrix(self):
        return axis_angle_to_matrix(self.rotation)

    def center(self):
        """Camera center in world coordinates."""
        return -self.matrix().T @ self.translation


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    view_id: int = 0
    initialized: bool = True

    def projection_matrix(self):
        rt = np.hstack([self.extrinsics.matrix(), self.extrinsics.translation[:, None]])
        return self.intrinsics.matrix() @ rt

    def with_extrinsics(self, ext):
        return replace(self, extrinsics=ext)


# ------------------------------
# Projection and rays
# ------------------------------

def project(p, cam: Camera):
    """Pinhole projection of a world point to pixels.

    Raises PointBehindCamera when the camera-frame depth is <= 1e-6 mm.
    """
    p = as_array(p, (3,), "point")
    q = cam.extrinsics.matrix() @ p + cam.extrinsics.translation
    if q[2] <= 1e-6:
        raise PointBehindCamera(f"camera-frame depth {q[2]:.6g} mm")
    k = cam.intrinsics
    return np.array(
        [k.fx * q[0] / q[2] + k.skew * q[1] / q[2] + k.cx, k.fy * q[1] / q[2] + k.cy]
    )


def project_many(points, cam: Camera):
    """Vectorized projection, (..., 3) -> pixels (..., 2) and depths (...,).

    Does not raise for points behind the camera; callers check the returned
    depths. Depths are clamped away from zero before the division.
    """
    points = np.asarray(points, dtype=np.float64)
    q = points @ cam.extrinsics.matrix().T + cam.extrinsics.translation
    depth = q[..., 2]
    z = np.where(np.abs(depth) < 1e-6, 1e-6, depth)
    k = cam.intrinsics
    u = k.fx * q[..., 0] / z + k.skew * q[..., 1] / z + k.cx
    v = k.fy * q[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1), depth


@dataclass(frozen=True)
class PlueckerRay:
    """Line through space as (unit direction, moment)."""

    direction: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        d = as_array(self.direction, (3,), "direction")
        m = as_array(self.moment, (3,), "moment")
        norm = np.linalg.norm(d)
        if norm < _EPS:
            raise ValueError("ray direction must be nonzero")
        d = d / norm
        m = m / norm
        # re-orthogonalize the moment against accumulated rounding
        m = m - d * (d @ m)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "moment", m)

    @staticmethod
    def through_points(p0, p1):
        p0 = as_array(p0, (3,), "p0")
        p1 = as_array(p1, (3,), "p1")
        return PlueckerRay(p1 - p0, np.cross(p0, p1 - p0))

    def point_closest_to_origin(self):
        return np.cross(self.direction, self.moment)

    def point_at(self, s):
        """Point at signed distance s (mm) from the closest-to-origin point."""
        return self.point_closest_to_origin() + s * self.direction


def pixel_to_ray(px, cam: Camera):
    """Back-project a pixel into a world-space Plucker ray through the camera center."""
    px = as_array(px, (2,), "pixel")
    k = cam.intrinsics
    # invert the upper-triangular K analytically
    y = (px[1] - k.cy) / k.fy
    x = (px[0] - k.cx - k.skew * y) / k.fx
    d_cam = np.array([x, y, 1.0])
    rot = cam.extrinsics.matrix()
    d_world = rot.T @ d_cam
    center = -rot.T @ cam.extrinsics.translation
    return PlueckerRay(d_world, np.cross(center, d_world))


def rays_from_pixels(pixels, cam: Camera):
    """Vectorized pixel_to_ray: (..., 2) -> directions (..., 3), moments (..., 3)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    k = cam.intrinsics
    y = (pixels[..., 1] - k.cy) / k.fy
    x = (pixels[..., 0] - k.cx - k.skew * y) / k.fx
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    rot = cam.extrinsics.matrix()
    d_world = d_cam @ rot
    d_world = d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)
    center = -rot.T @ cam.extrinsics.translation
    moments = np.cross(np.broadcast_to(center, d_world.shape), d_world)
    return d_world, moments


def point_ray_distance(x, ray: PlueckerRay):
    """Euclidean distance from a point to the ray's line: ||x x n - l||."""
    x = as_array(x, (3,), "point")
    return float(np.linalg.norm(np.cross(x, ray.direction) - ray.moment))


def point_ray_distances(points, directions, moments):
    """Batched ||x x n - l|| with broadcasting over leading dims."""
    points = np.asarray(points, dtype=np.float64)
    return np.linalg.norm(np.cross(points, directions) - moments, axis=-1)


def ray_coplanarity(a: PlueckerRay, b: PlueckerRay):
    """Reciprocal product n_a . l_b + n_b . l_a; zero iff the lines are coplanar."""
    return float(a.direction @ b.moment + b.direction @ a.moment)


def triangulate(rays: Sequence[PlueckerRay], weights: Optional[Sequence[float]] = None):
    """Weighted least-squares point minimizing sum_i w_i * dist(x, ray_i)^2.

    Solves the 3x3 normal system sum w (I - n n^T) x = sum w (n x l).
    Raises DegenerateConfiguration when the normal matrix condition number
    exceeds 1e10 (e.g. all rays parallel).
    """
    if len(rays) < 2:
        raise DegenerateConfiguration("need at least two rays")
    dirs = np.stack([r.direction for r in rays])
    moms = np.stack([r.moment for r in rays])
    return triangulate_arrays(dirs, moms, weights)


def triangulate_arrays(directions, moments, weights=None):
    directions = np.asarray(directions, dtype=np.float64)
    moments = np.asarray(moments, dtype=np.float64)
    if weights is None:
        w = np.ones(directions.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
    normal = (w[:, None, None] * (np.eye(3) - directions[:, :, None] * directions[:, None, :])).sum(axis=0)
    rhs = (w[:, None] * np.cross(directions, moments)).sum(axis=0)
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > 1e10:
        raise DegenerateConfiguration(f"normal matrix condition number {cond:.3g}")
    return np.linalg.solve(normal, rhs)


def triangulate_batch(directions, moments, weights, min_views=2):
    """Triangulate many independent points at once.

    directions, moments: (M, V, 3); weights: (M, V), zero marking a missing ray.
    Returns points (M, 3) and an ok mask; rows with fewer than `min_views`
    usable rays or an ill-conditioned system are flagged False.
    """
    directions = np.asarray(directions, dtype=np.float64)
    moments = np.asarray(moments, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    outer = directions[..., :, None] * directions[..., None, :]
    normal = (weights[..., None, None] * (np.eye(3) - outer)).sum(axis=-3)
    rhs = (weights[..., None] * np.cross(directions, moments)).sum(axis=-2)
    counts = (weights > 0).sum(axis=-1)
    ok = counts >= min_views
    points = np.zeros(rhs.shape)
    if np.any(ok):
        sub = normal[ok]
        cond = np.linalg.cond(sub)
        good = np.isfinite(cond) & (cond <= 1e10)
        solved = np.zeros((sub.shape[0], 3))
        if np.any(good):
            solved[good] = np.linalg.solve(sub[good], rhs[ok][good][..., None])[..., 0]
        points[ok] = solved
        ok_idx = np.flatnonzero(ok)
        ok[ok_idx[~good]] = False
    return points, ok


# ------------------------------
# Fundamental matrix estimation (normalized 8-point inside RANSAC)
# ------------------------------

@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    threshold_px: float = 2.0
    min_inlier_ratio: float = 0.5
    seed: int = 0


def _hartley_normalization(pts):
    """Similarity transform moving the centroid to the origin and the mean
    distance to sqrt(2). Returns (3, 3) transform and normalized points."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / max(d, _EPS)
    t = np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return t, (pts - centroid) * scale


def _eight_point(pts_a, pts_b):
    """Normalized 8-point fundamental matrix from >= 8 correspondences."""
    ta, na = _hartley_normalization(pts_a)
    tb, nb = _hartley_normalization(pts_b)
    x1, y1 = na[:, 0], na[:, 1]
    x2, y2 = nb[:, 0], nb[:, 1]
    a = np.stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones_like(x1)], axis=1
    )
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt2 = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ vt2
    f = tb.T @ f @ ta
    norm = np.linalg.norm(f)
    return f / max(norm, _EPS)


def sampson_distance(f, pts_a, pts_b):
    """First-order geometric (Sampson) distance in pixels for each pair."""
    ones = np.ones((pts_a.shape[0], 1))
    xa = np.hstack([pts_a, ones])
    xb = np.hstack([pts_b, ones])
    fa = xa @ f.T
    fb = xb @ f
    num = np.einsum("ij,ij->i", xb, xa @ f.T)
    den = fa[:, 0] ** 2 + fa[:, 1] ** 2 + fb[:, 0] ** 2 + fb[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, _EPS))


def estimate_fundamental(pts_a, pts_b, config: RansacConfig = RansacConfig()):
    """RANSAC + normalized 8-point fundamental matrix.

    Returns (F, inlier_mask). Model ranking is inlier count, ties broken by
    lower mean Sampson error; deterministic for a fixed config seed.
    """
    pts_a = as_array(pts_a, (-1, 2), "pts_a")
    pts_b = as_array(pts_b, (-1, 2), "pts_b")
    n = pts_a.shape[0]
    if pts_b.shape[0] != n:
        raise ValueError("correspondence arrays differ in length")
    if n < 8:
        raise InsufficientCorrespondences(f"need >= 8 correspondences, got {n}")

    rng = np.random.default_rng(config.seed)
    best = None  # (count, -mean_sampson, F, mask)
    for _ in range(config.iterations):
        idx = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(pts_a[idx], pts_b[idx])
        except np.linalg.LinAlgError:
            continue
        err = sampson_distance(f, pts_a, pts_b)
        mask = err <= config.threshold_px
        count = int(mask.sum())
        if count < 8:
            continue
        mean_err = float(err[mask].mean())
        key = (count, -mean_err)
        if best is None or key > (best[0], best[1]):
            best = (count, -mean_err, f, mask)

    if best is None or best[0] < config.min_inlier_ratio * n:
        got = 0 if best is None else best[0]
        raise NoConsensus(f"best consensus {got}/{n} below ratio {config.min_inlier_ratio}")

    # refit on the consensus set and recompute the mask so the returned
    # inliers are guaranteed consistent with the returned F
    mask = best[3]
    f = _eight_point(pts_a[mask], pts_b[mask])
    err = sampson_distance(f, pts_a, pts_b)
    mask = err <= config.threshold_px
    if int(mask.sum()) < config.min_inlier_ratio * n:
        raise NoConsensus("consensus collapsed after refit")
    return f, mask


# ------------------------------
# Relative pose from the fundamental matrix
# ------------------------------

def decompose_to_extrinsics(
    f,
    k1: Intrinsics,
    k2: Intrinsics,
    pts_a,
    pts_b,
    tie_margin: float = 0.05,
):
    """Recover the relative pose (R, t) of camera b w.r.t. camera a from F.

    The essential matrix K2^T F K1 is decomposed into the four (R, t)
    candidates; the one maximizing positive-depth triangulations wins.
    Translation is unit length (scale gauge resolved downstream).
    Raises CheiralityAmbiguity when the best candidate beats the runner-up
    by fewer than tie_margin * n_points triangulations.
    """
    f = as_array(f, (3, 3), "fundamental")
    pts_a = as_array(pts_a, (-1, 2), "pts_a")
    pts_b = as_array(pts_b, (-1, 2), "pts_b")
    e = k2.matrix().T @ f @ k1.matrix()
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    rot_a = u @ w @ vt
    rot_b = u @ w.T @ vt
    t = u[:, 2]
    t = t / np.linalg.norm(t)
    candidates = [(rot_a, t), (rot_a, -t), (rot_b, t), (rot_b, -t)]

    cam_a = Camera(k1, Extrinsics.identity())
    counts = []
    for rot, trans in candidates:
        ext = Extrinsics(matrix_to_axis_angle(rot), trans)
        cam_b = Camera(k2, ext)
        count = 0
        for pa, pb in zip(pts_a, pts_b):
            try:
                x = triangulate([pixel_to_ray(pa, cam_a), pixel_to_ray(pb, cam_b)])
            except DegenerateConfiguration:
                continue
            za = x[2]
            zb = (rot @ x + trans)[2]
            if za > 0 and zb > 0:
                count += 1
        counts.append(count)

    order = np.argsort(counts)[::-1]
    n = pts_a.shape[0]
    if counts[order[0]] == 0 or counts[order[0]] - counts[order[1]] < tie_margin * n:
        raise CheiralityAmbiguity(
            f"candidate depth counts {sorted(counts, reverse=True)} of {n} points are not separable"
        )
    rot, trans = candidates[order[0]]
    return Extrinsics(matrix_to_axis_angle(rot), trans)


# ------------------------------
# All-view initialization against the reference view
# ------------------------------

@dataclass
class ViewInitResult:
    extrinsics: list           # per view Extrinsics (identity placeholder when failed)
    initialized: np.ndarray    # (V,) bool
    inlier_counts: np.ndarray  # (V,) int, 0 for the reference / failures
    mean_sampson: np.ndarray   # (V,) float, nan where unavailable
    notes: dict = field(default_factory=dict)


def _refine_first_frame(extrinsics, initialized, pixels, valid, intrinsics, loss_scale_px=4.0):
    """Small robust bundle refinement of the pairwise initialization.

    Jointly adjusts every initialized non-reference view and the first-frame
    3D points to minimize reprojection error. View 0 stays fixed (gauge).
    """
    from scipy.optimize import least_squares

    free = [v for v in range(1, len(extrinsics)) if initialized[v]]
    if not free:
        return extrinsics
    cams = [Camera(intrinsics[v], extrinsics[v]) for v in range(len(extrinsics))]
    use_views = [0] + free
    n_pts = pixels.shape[1]

    points = np.full((n_pts, 3), np.nan)
    for i in range(n_pts):
        rays = [
            pixel_to_ray(pixels[v, i], cams[v])
            for v in use_views
            if valid[v, i]
        ]
        if len(rays) < 2:
            continue
        try:
            points[i] = triangulate(rays)
        except DegenerateConfiguration:
            continue
    keep = np.all(np.isfinite(points), axis=1)
    if int(keep.sum()) < 6:
        return extrinsics
    points = points[keep]
    obs_pixels = pixels[:, keep]
    obs_valid = valid[:, keep]

    def unpack(x):
        exts = list(extrinsics)
        off = 0
        for v in free:
            exts[v] = Extrinsics(x[off : off + 3], x[off + 3 : off + 6])
            off += 6
        pts = x[off:].reshape(-1, 3)
        return exts, pts

    def residuals(x):
        exts, pts = unpack(x)
        res = []
        for v in use_views:
            cam = Camera(intrinsics[v], exts[v])
            proj, depth = project_many(pts, cam)
            r = (proj - obs_pixels[v]) * obs_valid[v][:, None]
            r[depth <= 0] = 1e5
            res.append(r.ravel())
        return np.concatenate(res)

    x0 = np.concatenate(
        [np.concatenate([extrinsics[v].rotation, extrinsics[v].translation]) for v in free]
        + [points.ravel()]
    )
    sol = least_squares(residuals, x0, loss="soft_l1", f_scale=loss_scale_px, max_nfev=200)
    exts, _ = unpack(sol.x)
    return exts


def init_all_cameras(
    first_frame_pixels,
    intrinsics: Sequence[Intrinsics],
    config: RansacConfig = RansacConfig(),
    refine: bool = True,
):
    """Pairwise epipolar initialization of every view against view 0.

    first_frame_pixels: (V, M, 2) array of corresponding first-frame joints
    (all people concatenated, matched by track identity and joint index);
    NaN rows mark missing detections. View 0 defines the world frame; the
    first successfully initialized other view fixes the translation scale
    to 1, and the remaining views are rescaled onto the same scene scale by
    comparing triangulated distances of shared joints from the origin.
    """
    pixels = np.asarray(first_frame_pixels, dtype=np.float64)
    n_views = pixels.shape[0]
    if n_views < 2:
        raise InsufficientCorrespondences("camera initialization needs at least two views")
    if len(intrinsics) != n_views:
        raise ValueError("one Intrinsics per view required")

    valid = np.all(np.isfinite(pixels), axis=2)  # (V, M)
    exts = [Extrinsics.identity() for _ in range(n_views)]
    initialized = np.zeros(n_views, dtype=bool)
    initialized[0] = True
    inlier_counts = np.zeros(n_views, dtype=int)
    mean_sampson = np.full(n_views, np.nan)
    notes = {}

    pair_points = {}  # view -> (M,) dict of joint index -> distance from origin
    for v in range(1, n_views):
        both = valid[0] & valid[v]
        if int(both.sum()) < 8:
            notes[v] = "fewer than 8 shared first-frame joints"
            continue
        pa = pixels[0][both]
        pb = pixels[v][both]
        try:
            fmat, mask = estimate_fundamental(pa, pb, config)
            ext = decompose_to_extrinsics(fmat, intrinsics[0], intrinsics[v], pa[mask], pb[mask])
        except (NoConsensus, CheiralityAmbiguity, DegenerateConfiguration) as exc:
            notes[v] = f"{type(exc).__name__}: {exc}"
            continue
        exts[v] = ext
        initialized[v] = True
        inlier_counts[v] = int(mask.sum())
        mean_sampson[v] = float(sampson_distance(fmat, pa, pb)[mask].mean())

        cam_a = Camera(intrinsics[0], Extrinsics.identity())
        cam_b = Camera(intrinsics[v], ext)
        dists = {}
        idx_all = np.flatnonzero(both)
        for local_i, joint_i in enumerate(idx_all):
            if not mask[local_i]:
                continue
            try:
                x = triangulate([pixel_to_ray(pa[local_i], cam_a), pixel_to_ray(pb[local_i], cam_b)])
            except DegenerateConfiguration:
                continue
            dists[int(joint_i)] = float(np.linalg.norm(x))
        pair_points[v] = dists

    done = [v for v in range(1, n_views) if initialized[v]]
    if done:
        # reconcile the per-pair baseline gauges onto the first initialized view
        ref = done[0]
        ref_d = pair_points.get(ref, {})
        for v in done[1:]:
            ratios = [
                ref_d[j] / d
                for j, d in pair_points.get(v, {}).items()
                if j in ref_d and d > _EPS
            ]
            if len(ratios) >= 3:
                alpha = float(np.median(ratios))
                exts[v] = Extrinsics(exts[v].rotation, exts[v].translation * alpha)
            else:
                notes[v] = notes.get(v, "") + " scale reconciliation skipped (too few shared joints)"

    if refine and len(done) >= 1:
        exts = _refine_first_frame(exts, initialized, pixels, valid, list(intrinsics))

    return ViewInitResult(exts, initialized, inlier_counts, mean_sampson, notes)


# ------------------------------
# Absolute pose (resection) for views that failed epipolar initialization
# ------------------------------

def _refine_resection(ext, points3d, pixels, intrinsics, loss_scale_px=4.0):
    from scipy.optimize import least_squares

    def residuals(x):
        cam = Camera(intrinsics, Extrinsics(x[:3], x[3:]))
        proj, depth = project_many(points3d, cam)
        res = proj - pixels
        # behind-camera points must never be cheaper than any in-front fit
        res[depth <= 0] = 1e5
        return res.ravel()

    x0 = np.concatenate([ext.rotation, ext.translation])
    sol = least_squares(residuals, x0, loss="soft_l1", f_scale=loss_scale_px, max_nfev=100)
    return Extrinsics(sol.x[:3], sol.x[3:])


def _dlt_resection(points3d, norm_px):
    n = points3d.shape[0]
    centroid = points3d.mean(axis=0)
    scale = np.linalg.norm(points3d - centroid, axis=1).mean()
    xs = (points3d - centroid) / max(scale, _EPS)

    a = np.zeros((2 * n, 12))
    x, y, z = xs[:, 0], xs[:, 1], xs[:, 2]
    u, v = norm_px[:, 0], norm_px[:, 1]
    ones = np.ones(n)
    a[0::2, 0:4] = np.stack([x, y, z, ones], axis=1)
    a[0::2, 8:12] = -u[:, None] * np.stack([x, y, z, ones], axis=1)
    a[1::2, 4:8] = np.stack([x, y, z, ones], axis=1)
    a[1::2, 8:12] = -v[:, None] * np.stack([x, y, z, ones], axis=1)
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    # undo the 3D normalization
    t_norm = np.eye(4)
    t_norm[:3, :3] /= max(scale, _EPS)
    t_norm[:3, 3] = -centroid / max(scale, _EPS)
    p = p @ t_norm

    m = p[:, :3]
    if np.linalg.det(m) < 0:
        p = -p
        m = -m
    u_m, s_m, vt_m = np.linalg.svd(m)
    rot = u_m @ vt_m
    lam = s_m.mean()
    trans = p[:, 3] / max(lam, _EPS)
    return rot, trans


def resect_view(
    points3d,
    pixels,
    intrinsics: Intrinsics,
    refine: bool = True,
    ransac_iterations: int = 64,
    inlier_px: float = 8.0,
    seed: int = 0,
):
    """Camera resection from 3D-2D matches with known intrinsics.

    RANSAC over 6-point DLT minimal sets (gross outliers such as swapped
    identities have unbounded influence on the plain linear fit), refit on
    the consensus and polished by robust reprojection least squares.
    Returns Extrinsics.
    """
    points3d = as_array(points3d, (-1, 3), "points3d")
    pixels = as_array(pixels, (-1, 2), "pixels")
    n = points3d.shape[0]
    if n < 6:
        raise InsufficientCorrespondences(f"resection needs >= 6 points, got {n}")
    kinv = np.linalg.inv(intrinsics.matrix())
    norm_px = (np.hstack([pixels, np.ones((n, 1))]) @ kinv.T)[:, :2]

    def reproj_errors(rot, trans):
        ext = Extrinsics(matrix_to_axis_angle(rot), trans)
        proj, depth = project_many(points3d, Camera(intrinsics, ext))
        err = np.linalg.norm(proj - pixels, axis=1)
        err[depth <= 0] = np.inf
        return err

    rng = np.random.default_rng(seed)
    best = None  # (count, -mean_err, keep)
    rot, trans = _dlt_resection(points3d, norm_px)
    err = reproj_errors(rot, trans)
    mask = err < inlier_px
    if mask.sum() >= 6:
        best = (int(mask.sum()), -float(err[mask].mean()), mask)
    for _ in range(ransac_iterations):
        idx = rng.choice(n, size=6, replace=False)
        try:
            rot, trans = _dlt_resection(points3d[idx], norm_px[idx])
        except np.linalg.LinAlgError:
            continue
        err = reproj_errors(rot, trans)
        mask = err < inlier_px
        count = int(mask.sum())
        if count < 6:
            continue
        key = (count, -float(err[mask].mean()))
        if best is None or key > (best[0], best[1]):
            best = (count, key[1], mask)
    if best is None:
        raise DegenerateConfiguration("no resection consensus")

    keep = best[2]
    for _ in range(3):
        rot, trans = _dlt_resection(points3d[keep], norm_px[keep])
        err = reproj_errors(rot, trans)
        new_keep = err < inlier_px
        if int(new_keep.sum()) < 6 or np.array_equal(new_keep, keep):
            break
        keep = new_keep

    depths = points3d[keep] @ rot[2] + trans[2]
    if np.median(depths) < 0:
        raise DegenerateConfiguration("resection places the scene behind the camera")
    ext = Extrinsics(matrix_to_axis_angle(rot), trans)
    if refine:
        ext = _refine_resection(ext, points3d[keep], pixels[keep], intrinsics)
    return ext
