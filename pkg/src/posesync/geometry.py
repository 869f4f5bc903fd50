"""SO(3)/SE(3) arithmetic and the small numerical kernels built on it.

Rotations are plain ``(3, 3)`` float arrays. :class:`RigidTransform` wraps a
rotation and a translation and maps a point ``x`` to ``R @ x + t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, DegenerateMatrix

SINGULAR_TOL = 1e-12


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an ``(n, 3)`` array (or a single 3-vector)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def relative_to(self, other: RigidTransform) -> RigidTransform:
        """``self⁻¹ ∘ other``, the pose of ``other`` expressed in this frame."""
        return self.inverse().compose(other)

    def same_as(self, other: RigidTransform) -> bool:
        """Bit-exact equality of both fields."""
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return (f"RigidTransform(rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()})")


def is_rotation(m, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    orth = np.max(np.abs(m @ m.T - np.eye(3))) < tol
    return bool(orth and abs(np.linalg.det(m) - 1.0) < tol)


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle_deg`` degrees."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be non-zero")
    k = hat(axis / n)
    th = np.deg2rad(angle_deg)
    return np.eye(3) + np.sin(th) * k + (1.0 - np.cos(th)) * (k @ k)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def angular_distance(a, b) -> float:
    """Angle in degrees of the rotation ``aᵀ b``, in ``[0, 180]``.

    Equal to ``arccos((tr(aᵀb) - 1) / 2)``. The angle is recovered with
    ``atan2`` from the symmetric (cosine) and skew (sine) parts so that
    it stays accurate near 0°, where the plain arccos loses half the digits.
    """
    r = np.asarray(a, dtype=float).T @ np.asarray(b, dtype=float)
    c = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.degrees(np.arctan2(s, c)))


def angular_distances(a, b) -> np.ndarray:
    """Vectorized :func:`angular_distance` over stacks of shape ``(n, 3, 3)``."""
    r = np.einsum("nki,nkj->nij", np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    c = np.clip((np.trace(r, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.stack([r[:, 2, 1] - r[:, 1, 2], r[:, 0, 2] - r[:, 2, 0], r[:, 1, 0] - r[:, 0, 1]], axis=1)
    s = 0.5 * np.linalg.norm(skew, axis=1)
    return np.degrees(np.arctan2(s, c))


def project_to_so3(m) -> np.ndarray:
    """Nearest proper rotation to ``m`` in Frobenius norm.

    Raises DegenerateMatrix when ``m`` is (numerically) rank deficient.
    """
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= SINGULAR_TOL:
        raise DegenerateMatrix(f"singular value {s[-1]:.3e} below {SINGULAR_TOL}")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def project_to_so3_batch(ms) -> np.ndarray:
    """:func:`project_to_so3` over a ``(b, 3, 3)`` stack."""
    ms = np.asarray(ms, dtype=float)
    u, s, vt = np.linalg.svd(ms)
    bad = np.flatnonzero(s[:, -1] <= SINGULAR_TOL)
    if bad.size:
        raise DegenerateMatrix(f"matrix {bad[0]}: singular value {s[bad[0], -1]:.3e} "
                               f"below {SINGULAR_TOL}")
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[:, :, 2] *= d[:, None]
    return u @ vt


def fit_rigid(src, dst) -> RigidTransform:
    """Least-squares rigid transform with ``dst ≈ R @ src + t`` (Kabsch)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must be matching (n, 3) arrays")
    if len(src) < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] <= SINGULAR_TOL * max(1.0, s[0]):
        raise DegenerateConfiguration("centered cross-covariance has rank < 2 (collinear points)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def fit_rigid_batch(src, dst):
    """Kabsch on a batch of point sets, shapes ``(b, n, 3)``.

    Returns ``(R, t)`` stacks of shapes ``(b, 3, 3)`` and ``(b, 3)``. No
    degeneracy checks; callers screen their samples.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs = src.mean(axis=1)
    cd = dst.mean(axis=1)
    h = np.einsum("bni,bnj->bij", src - cs[:, None], dst - cd[:, None])
    u, _, vt = np.linalg.svd(h)
    v = np.swapaxes(vt, 1, 2)
    ut = np.swapaxes(u, 1, 2)
    d = np.sign(np.linalg.det(v @ ut))
    corr = np.tile(np.eye(3), (len(src), 1, 1))
    corr[:, 2, 2] = d
    r = v @ corr @ ut
    t = cd - np.einsum("bij,bj->bi", r, cs)
    return r, t
