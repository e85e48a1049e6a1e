"""3x3 / quaternion geometry kernels, with hand-written backward passes.

All functions take and return float64 numpy arrays. Batched variants accept
a leading batch axis; quaternions are (w, x, y, z). Backward functions
implement the exact vector-Jacobian product of their forward twin and are
finite-difference tested.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateFacet, RankDeficient

_EPS_PARALLEL = 1e-6   # min angle (rad) between the first two basis inputs
_EPS_SPAN = 1e-9       # relative residual for the third input off the plane


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def normalize_backward(v, g, axis: int = -1):
    """VJP of normalize: pulls g (grad wrt unit vector) back to v."""
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    u = v / n
    return (g - u * np.sum(u * g, axis=axis, keepdims=True)) / n


# ---------------------------------------------------------------------------
# Gram-Schmidt orthonormal bases
# ---------------------------------------------------------------------------

def gram_schmidt_basis(e1, e2, e3) -> np.ndarray:
    """Orthonormalize three vectors into a basis matrix (vectors in columns).

    Column 1 is e1 normalized; handedness follows the input triple.
    Raises DegenerateFacet when the inputs do not span 3-space.
    """
    O, _ = gram_schmidt_batch(
        np.asarray(e1, float)[None], np.asarray(e2, float)[None], np.asarray(e3, float)[None]
    )
    return O[0]


def gram_schmidt_batch(e1, e2, e3, facet_offset: int = 0):
    """Batched Gram-Schmidt. Returns (O, cache); O is (N,3,3), columns orthonormal.

    cache carries the intermediates needed by gram_schmidt_backward.
    """
    e1 = np.asarray(e1, float)
    e2 = np.asarray(e2, float)
    e3 = np.asarray(e3, float)
    n1 = np.linalg.norm(e1, axis=-1)
    bad = np.flatnonzero(n1 < 1e-12)
    if bad.size:
        raise DegenerateFacet("first basis vector is zero", int(bad[0]) + facet_offset)
    u1 = e1 / n1[..., None]

    c2 = np.sum(u1 * e2, axis=-1)
    w2 = e2 - c2[..., None] * u1
    nw2 = np.linalg.norm(w2, axis=-1)
    ne2 = np.linalg.norm(e2, axis=-1)
    bad = np.flatnonzero(nw2 < _EPS_PARALLEL * ne2)
    if bad.size:
        raise DegenerateFacet("second basis vector parallel to first", int(bad[0]) + facet_offset)
    u2 = w2 / nw2[..., None]

    c31 = np.sum(u1 * e3, axis=-1)
    c32 = np.sum(u2 * e3, axis=-1)
    w3 = e3 - c31[..., None] * u1 - c32[..., None] * u2
    nw3 = np.linalg.norm(w3, axis=-1)
    ne3 = np.linalg.norm(e3, axis=-1)
    bad = np.flatnonzero(nw3 < _EPS_SPAN * ne3)
    if bad.size:
        raise DegenerateFacet("third basis vector lies in the first two's span", int(bad[0]) + facet_offset)
    u3 = w3 / nw3[..., None]

    O = np.stack([u1, u2, u3], axis=-1)
    cache = (e1, e2, e3, u1, u2, u3, n1, nw2, nw3, c2, c31, c32)
    return O, cache


def gram_schmidt_backward(cache, dO):
    """VJP of gram_schmidt_batch: dO (N,3,3) -> (de1, de2, de3)."""
    e1, e2, e3, u1, u2, u3, n1, nw2, nw3, c2, c31, c32 = cache
    gu1 = dO[..., :, 0].copy()
    gu2 = dO[..., :, 1].copy()
    gu3 = dO[..., :, 2].copy()

    # u3 = w3 / |w3|;  w3 = e3 - c31*u1 - c32*u2
    gw3 = (gu3 - u3 * np.sum(u3 * gu3, axis=-1, keepdims=True)) / nw3[..., None]
    ge3 = gw3.copy()
    gc31 = -np.sum(u1 * gw3, axis=-1)
    gc32 = -np.sum(u2 * gw3, axis=-1)
    gu1 += -c31[..., None] * gw3
    gu2 += -c32[..., None] * gw3
    # c31 = u1.e3, c32 = u2.e3
    gu1 += gc31[..., None] * e3
    ge3 += gc31[..., None] * u1
    gu2 += gc32[..., None] * e3
    ge3 += gc32[..., None] * u2

    # u2 = w2 / |w2|;  w2 = e2 - c2*u1
    gw2 = (gu2 - u2 * np.sum(u2 * gu2, axis=-1, keepdims=True)) / nw2[..., None]
    ge2 = gw2.copy()
    gc2 = -np.sum(u1 * gw2, axis=-1)
    gu1 += -c2[..., None] * gw2
    gu1 += gc2[..., None] * e2
    ge2 += gc2[..., None] * u1

    # u1 = e1 / |e1|
    ge1 = (gu1 - u1 * np.sum(u1 * gu1, axis=-1, keepdims=True)) / n1[..., None]
    return ge1, ge2, ge3


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def relative_rotation(o_before: np.ndarray, o_after: np.ndarray) -> np.ndarray:
    """Rotation mapping the before-basis onto the after-basis: O' O^T."""
    return o_after @ np.swapaxes(o_before, -1, -2)


def polar_rotation(m: np.ndarray) -> np.ndarray:
    """Closest rotation to m in Frobenius norm, det +1 enforced.

    Raises RankDeficient when the second singular value is below 1e-9
    (the best rotation is then ambiguous).
    """
    m = np.asarray(m, float)
    u, s, vt = np.linalg.svd(m)
    if s[1] < 1e-9:
        raise RankDeficient(f"singular values {s} leave the rotation ambiguous")
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[:, 2] *= d
    return u @ vt


def polar_rotation_batch(m: np.ndarray) -> np.ndarray:
    """Batched polar rotation; rank-deficient entries raise RankDeficient."""
    u, s, vt = np.linalg.svd(m)
    if np.any(s[:, 1] < 1e-9):
        idx = int(np.flatnonzero(s[:, 1] < 1e-9)[0])
        raise RankDeficient(f"entry {idx}: ambiguous best-fit rotation")
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[:, :, 2] *= d[:, None]
    return u @ vt


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = normalize(np.asarray(axis, float))
    x, y, z = a
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_identity(n: int | None = None) -> np.ndarray:
    if n is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    q = np.zeros((n, 4))
    q[:, 0] = 1.0
    return q


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0 (stable serialization)."""
    q = np.asarray(q, float)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """Unit-normalizes q, then converts to a rotation matrix (batched)."""
    q = normalize(np.asarray(q, float))
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def quat_to_mat_backward(q_raw: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """VJP of quat_to_mat wrt the raw (pre-normalization) quaternion."""
    q_raw = np.asarray(q_raw, float)
    q = normalize(q_raw)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    zero = np.zeros_like(w)

    def m(rows):
        return 2.0 * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    dRdw = m([(zero, -z, y), (z, zero, -x), (-y, x, zero)])
    dRdx = m([(zero, y, z), (y, -2 * x, -w), (z, w, -2 * x)])
    dRdy = m([(-2 * y, x, w), (x, zero, z), (-w, z, -2 * y)])
    dRdz = m([(-2 * z, -w, x), (w, -2 * z, y), (x, y, zero)])
    g_hat = np.stack(
        [np.sum(dR * d, axis=(-1, -2)) for d in (dRdw, dRdx, dRdy, dRdz)], axis=-1
    )
    return normalize_backward(q_raw, g_hat)


def mat_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (batched, Shepperd branches, w >= 0)."""
    R = np.asarray(R, float)
    scalar = R.ndim == 2
    if scalar:
        R = R[None]
    q, _ = _mat_to_quat_fwd(R)
    q = quat_canonical(q)
    return q[0] if scalar else q


def _mat_to_quat_fwd(R):
    n = R.shape[0]
    tr = R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    # branch selection: trace branch when tr > max diagonal entry, else the
    # largest-diagonal branch; all four computed safely, then gathered
    diag = np.stack([R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    dmax = np.argmax(diag, axis=1)
    branch = np.where(tr > diag[np.arange(n), dmax], 0, dmax + 1)

    args = np.stack(
        [
            1.0 + tr,
            1.0 + R[:, 0, 0] - R[:, 1, 1] - R[:, 2, 2],
            1.0 + R[:, 1, 1] - R[:, 0, 0] - R[:, 2, 2],
            1.0 + R[:, 2, 2] - R[:, 0, 0] - R[:, 1, 1],
        ],
        axis=1,
    )
    arg = np.maximum(args[np.arange(n), branch], 1e-30)
    s = 2.0 * np.sqrt(arg)

    a01 = R[:, 0, 1] + R[:, 1, 0]
    a02 = R[:, 0, 2] + R[:, 2, 0]
    a12 = R[:, 1, 2] + R[:, 2, 1]
    d21 = R[:, 2, 1] - R[:, 1, 2]
    d02 = R[:, 0, 2] - R[:, 2, 0]
    d10 = R[:, 1, 0] - R[:, 0, 1]

    cand = np.empty((4, n, 4))
    cand[0] = np.stack([s / 4, d21 / s, d02 / s, d10 / s], axis=1)
    cand[1] = np.stack([d21 / s, s / 4, a01 / s, a02 / s], axis=1)
    cand[2] = np.stack([d02 / s, a01 / s, s / 4, a12 / s], axis=1)
    cand[3] = np.stack([d10 / s, a02 / s, a12 / s, s / 4], axis=1)
    q = cand[branch, np.arange(n)]
    return q, (branch, s)


def mat_to_quat_backward(R: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """VJP of mat_to_quat (including the w>=0 canonicalization)."""
    R = np.asarray(R, float)
    scalar = R.ndim == 2
    if scalar:
        R, dq = R[None], np.asarray(dq, float)[None]
    q_pre, (branch, s) = _mat_to_quat_fwd(R)
    sign = np.where(q_pre[:, :1] < 0.0, -1.0, 1.0)
    dq = np.asarray(dq, float) * sign  # undo the w>=0 sign flip

    n = R.shape[0]
    dR = np.zeros_like(R)
    a01 = R[:, 0, 1] + R[:, 1, 0]
    a02 = R[:, 0, 2] + R[:, 2, 0]
    a12 = R[:, 1, 2] + R[:, 2, 1]
    d21 = R[:, 2, 1] - R[:, 1, 2]
    d02 = R[:, 0, 2] - R[:, 2, 0]
    d10 = R[:, 1, 0] - R[:, 0, 1]

    # per branch, q = (s/4 at slot b, others = num/s); ds/darg = 2/s
    # numerators per slot and their dR stencils
    def add_diff(dst, i, j, g):
        dst[:, i, j] += g
        dst[:, j, i] -= g

    def add_sum(dst, i, j, g):
        dst[:, i, j] += g
        dst[:, j, i] += g

    for b in range(4):
        mask = branch == b
        if not np.any(mask):
            continue
        idx = np.flatnonzero(mask)
        sb = s[idx]
        g = dq[idx]
        if b == 0:
            nums = [None, d21[idx], d02[idx], d10[idx]]
            slot = 0
        elif b == 1:
            nums = [d21[idx], None, a01[idx], a02[idx]]
            slot = 1
        elif b == 2:
            nums = [d02[idx], a01[idx], None, a12[idx]]
            slot = 2
        else:
            nums = [d10[idx], a02[idx], a12[idx], None]
            slot = 3
        # dL/ds from the s/4 slot and from the num/s slots
        g_s = g[:, slot] / 4.0
        for k in range(4):
            if k == slot:
                continue
            g_s += g[:, k] * (-nums[k] / sb**2)
        g_arg = g_s * (2.0 / sb)
        sub = np.zeros((idx.size, 3, 3))
        # arg stencil: branch 0 -> +diag; branch i -> 1 + 2 R[i-1,i-1] - tr
        if b == 0:
            sub[:, 0, 0] += g_arg
            sub[:, 1, 1] += g_arg
            sub[:, 2, 2] += g_arg
        else:
            i = b - 1
            sub[:, 0, 0] -= g_arg
            sub[:, 1, 1] -= g_arg
            sub[:, 2, 2] -= g_arg
            sub[:, i, i] += 2.0 * g_arg
        # numerator stencils
        for k in range(4):
            if k == slot:
                continue
            gk = g[:, k] / sb
            pair = _QUAT_NUM_STENCIL[b][k]
            if pair[0] == "d":
                add_diff(sub, pair[1], pair[2], gk)
            else:
                add_sum(sub, pair[1], pair[2], gk)
        dR[idx] += sub
    return dR[0] if scalar else dR


# numerator source per (branch, slot): ('d', i, j) = R[i,j]-R[j,i]; ('s', i, j) = R[i,j]+R[j,i]
_QUAT_NUM_STENCIL = {
    0: {1: ("d", 2, 1), 2: ("d", 0, 2), 3: ("d", 1, 0)},
    1: {0: ("d", 2, 1), 2: ("s", 0, 1), 3: ("s", 0, 2)},
    2: {0: ("d", 0, 2), 1: ("s", 0, 1), 3: ("s", 1, 2)},
    3: {0: ("d", 1, 0), 1: ("s", 0, 2), 2: ("s", 1, 2)},
}


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; rotation action composes as R(a) @ R(b)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_mul_backward(a, b, dq):
    """VJP of quat_mul: returns (da, db)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    gw, gx, gy, gz = dq[..., 0], dq[..., 1], dq[..., 2], dq[..., 3]
    da = np.stack(
        [
            gw * bw + gx * bx + gy * by + gz * bz,
            -gw * bx + gx * bw - gy * bz + gz * by,
            -gw * by + gx * bz + gy * bw - gz * bx,
            -gw * bz - gx * by + gy * bx + gz * bw,
        ],
        axis=-1,
    )
    db = np.stack(
        [
            gw * aw + gx * ax + gy * ay + gz * az,
            -gw * ax + gx * aw + gy * az - gz * ay,
            -gw * ay - gx * az + gy * aw + gz * ax,
            -gw * az + gx * ay - gy * ax + gz * aw,
        ],
        axis=-1,
    )
    return da, db


def compose(q: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Apply rotation R after the rotation encoded by q; returns a quaternion."""
    return quat_mul(mat_to_quat(R), np.asarray(q, float))
