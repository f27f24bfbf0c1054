"""Hot numeric kernels with a numba and a pure-numpy implementation.

Both paths compute the same quantities with the same summation order per
output element; the active one is picked by :func:`set_backend` (defaulting to
``omnigyro._accel.BACKEND``).
"""
import numpy as np

from . import _accel
from ._accel import njit

_backend = _accel.BACKEND


def get_backend():
    return _backend


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"`` at runtime (tests, benchmarks)."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _accel.HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


# ---------------------------------------------------------------------------
# bilinear sampling with horizontal wraparound

@njit
def _bilinear_nb(img, u, v):
    H, W, C = img.shape
    n = u.shape[0]
    out = np.empty((n, C))
    for k in range(n):
        uu = u[k] % W
        vv = min(max(v[k], 0.0), H - 1.0)
        u0 = int(np.floor(uu))
        v0 = int(np.floor(vv))
        fu = uu - u0
        fv = vv - v0
        u0 = u0 % W
        u1 = (u0 + 1) % W
        v1 = min(v0 + 1, H - 1)
        w00 = (1.0 - fu) * (1.0 - fv)
        w01 = fu * (1.0 - fv)
        w10 = (1.0 - fu) * fv
        w11 = fu * fv
        for c in range(C):
            out[k, c] = (w00 * img[v0, u0, c] + w01 * img[v0, u1, c]
                         + w10 * img[v1, u0, c] + w11 * img[v1, u1, c])
    return out


def _bilinear_np(img, u, v):
    H, W, _ = img.shape
    uu = np.mod(u, W)
    vv = np.clip(v, 0.0, H - 1.0)
    u0f = np.floor(uu)
    v0f = np.floor(vv)
    fu = (uu - u0f)[:, None]
    fv = (vv - v0f)[:, None]
    u0 = u0f.astype(np.int64) % W
    v0 = v0f.astype(np.int64)
    u1 = (u0 + 1) % W
    v1 = np.minimum(v0 + 1, H - 1)
    return ((1.0 - fu) * (1.0 - fv) * img[v0, u0] + fu * (1.0 - fv) * img[v0, u1]
            + (1.0 - fu) * fv * img[v1, u0] + fu * fv * img[v1, u1])


def bilinear_sample(img, u, v):
    """Sample an (H, W, C) image at fractional pixel coords; returns (N, C).

    Integer coordinates hit pixel centres.  ``u`` wraps modulo W, ``v`` is
    clamped to [0, H-1].
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64).ravel()
    v = np.ascontiguousarray(v, dtype=np.float64).ravel()
    if _backend == "numba":
        return _bilinear_nb(img, u, v)
    return _bilinear_np(img, u, v)


# ---------------------------------------------------------------------------
# mixture of spherical kernels: G(x) = sum_i w_i exp((x . c_i - 1) * inv_lam2)

@njit
def _mpp_values_nb(points, centers, weights, inv_lam2, s_cut):
    K = points.shape[0]
    N = centers.shape[0]
    out = np.zeros(K)
    for k in range(K):
        px, py, pz = points[k, 0], points[k, 1], points[k, 2]
        acc = 0.0
        for i in range(N):
            s = px * centers[i, 0] + py * centers[i, 1] + pz * centers[i, 2]
            if s < s_cut:
                continue
            acc += weights[i] * np.exp((s - 1.0) * inv_lam2)
        out[k] = acc
    return out


def _mpp_values_np(points, centers, weights, inv_lam2, s_cut):
    s = points @ centers.T
    e = np.where(s >= s_cut, np.exp((s - 1.0) * inv_lam2), 0.0)
    return e @ weights


def mpp_values(points, centers, weights, inv_lam2, s_cut):
    """Evaluate the kernel mixture at each row of ``points`` (K, 3).

    Pairs with ``x . c < s_cut`` are skipped (truncation).
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if _backend == "numba":
        return _mpp_values_nb(points, centers, weights, float(inv_lam2), float(s_cut))
    return _mpp_values_np(points, centers, weights, inv_lam2, s_cut)


@njit
def _mpp_ssd_nb(targets, q, dq, d2q, centers, weights, inv_lam2, s_cut):
    K = q.shape[0]
    N = centers.shape[0]
    inv_lam4 = inv_lam2 * inv_lam2
    cost = 0.0
    d1 = 0.0
    d2 = 0.0
    for k in range(K):
        g = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(N):
            cx, cy, cz = centers[i, 0], centers[i, 1], centers[i, 2]
            s = q[k, 0] * cx + q[k, 1] * cy + q[k, 2] * cz
            if s < s_cut:
                continue
            s1 = dq[k, 0] * cx + dq[k, 1] * cy + dq[k, 2] * cz
            s2 = d2q[k, 0] * cx + d2q[k, 1] * cy + d2q[k, 2] * cz
            we = weights[i] * np.exp((s - 1.0) * inv_lam2)
            g += we
            g1 += we * s1 * inv_lam2
            g2 += we * (s2 * inv_lam2 + s1 * s1 * inv_lam4)
        r = targets[k] - g
        cost += r * r
        d1 += -2.0 * r * g1
        d2 += 2.0 * (g1 * g1 - r * g2)
    return cost, d1, d2


def _mpp_ssd_np(targets, q, dq, d2q, centers, weights, inv_lam2, s_cut):
    s = q @ centers.T
    s1 = dq @ centers.T
    s2 = d2q @ centers.T
    we = np.where(s >= s_cut, np.exp((s - 1.0) * inv_lam2), 0.0) * weights
    g = we.sum(axis=1)
    g1 = (we * s1).sum(axis=1) * inv_lam2
    g2 = (we * (s2 * inv_lam2 + s1 * s1 * inv_lam2 * inv_lam2)).sum(axis=1)
    r = targets - g
    return float(r @ r), float(-2.0 * (r @ g1)), float(2.0 * (g1 @ g1 - r @ g2))


def mpp_ssd(targets, q, dq, d2q, centers, weights, inv_lam2, s_cut):
    """SSD between ``targets`` and the mixture evaluated along a 1-D path.

    ``q``, ``dq``, ``d2q`` are the (K, 3) evaluation points and their first and
    second derivatives along the path parameter.  Returns ``(C, C', C'')``.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64)
            for a in (targets, q, dq, d2q, centers, weights)]
    if _backend == "numba":
        c, c1, c2 = _mpp_ssd_nb(*args, float(inv_lam2), float(s_cut))
        return float(c), float(c1), float(c2)
    return _mpp_ssd_np(*args, inv_lam2, s_cut)


# ---------------------------------------------------------------------------
# photometric residuals on rotated sphere points

# rational approximation of atan on |t| <= 0.66 (max error about 1 ulp); unlike
# the libm call it is branch-free, so the projection loop below vectorises
_AT_P = (-8.750608600031904122785e-1, -1.615753718733365076637e1, -7.500855792314704667340e1,
         -1.228866684490136173410e2, -6.485021904942025371773e1)
_AT_Q = (2.485846490142306297962e1, 1.650270098316988542046e2, 4.328810604912902668951e2,
         4.853903996359136964868e2, 1.945506571482613964425e2)
_P0, _P1, _P2, _P3, _P4 = _AT_P
_Q0, _Q1, _Q2, _Q3, _Q4 = _AT_Q


@njit(inline="always", error_model="numpy")
def _atan2(y, x):
    ax = abs(x)
    ay = abs(y)
    mx = ax if ax > ay else ay
    mn = ay if ax > ay else ax
    t = mn / (mx if mx > 0.0 else 1.0)
    big = t > 0.66
    d = (t - 1.0) / (t + 1.0)
    s = d if big else t
    z = s * s
    p = (((_P0 * z + _P1) * z + _P2) * z + _P3) * z + _P4
    q = ((((z + _Q0) * z + _Q1) * z + _Q2) * z + _Q3) * z + _Q4
    a = s + s * z * p / q
    a += 0.78539816339744830962 if big else 0.0
    a = 1.5707963267948966192 - a if ay > ax else a
    a = 3.1415926535897932385 - a if x < 0.0 else a
    return -a if y < 0.0 else a


@njit(error_model="numpy")
def atan2_nb(y, x):
    """Elementwise :func:`_atan2` (exposed for accuracy tests)."""
    out = np.empty(y.shape[0])
    for k in range(y.shape[0]):
        out[k] = _atan2(y[k], x[k])
    return out


@njit(error_model="numpy")
def _project_nb(Xt, R, H, W):
    """y = R.T x per column plus fractional pixel coordinates (u wrapped, v raw).

    Points come as a (3, N) array so that every access is unit-stride and the
    loop vectorises.
    """
    n = Xt.shape[1]
    Y = np.empty((3, n))
    U = np.empty(n)
    V = np.empty(n)
    xa, xb, xc = Xt[0], Xt[1], Xt[2]
    ya, yb, yc = Y[0], Y[1], Y[2]
    su = W / (2.0 * np.pi)
    sv = H / np.pi
    r00, r01, r02 = R[0, 0], R[0, 1], R[0, 2]
    r10, r11, r12 = R[1, 0], R[1, 1], R[1, 2]
    r20, r21, r22 = R[2, 0], R[2, 1], R[2, 2]
    for k in range(n):
        x0, x1, x2 = xa[k], xb[k], xc[k]
        y0 = r00 * x0 + r10 * x1 + r20 * x2
        y1 = r01 * x0 + r11 * x1 + r21 * x2
        y2 = r02 * x0 + r12 * x1 + r22 * x2
        ya[k] = y0
        yb[k] = y1
        yc[k] = y2
        u = (_atan2(y1, y0) + np.pi) * su - 0.5
        U[k] = u + W if u < 0.0 else u
        V[k] = (0.5 * np.pi - _atan2(y2, np.sqrt(y0 * y0 + y1 * y1))) * sv - 0.5
    return Y, U, V


_RES, _JAC, _NORMAL = 0, 1, 2


@njit(error_model="numpy")
def _photo_pass_nb(Xt, R, stack, ref_values, mode):
    """One sweep over the sphere points (columns of ``Xt``).

    mode 0 fills residuals, mode 1 also the Jacobian rows, mode 2 accumulates
    the Gauss-Newton normal equations (sequential, fixed-order sums) instead.
    """
    H, W, _ = stack.shape
    n = Xt.shape[1]
    Y, U, V = _project_nb(Xt, R, H, W)
    ya, yb, yc = Y[0], Y[1], Y[2]
    xa, xb, xc = Xt[0], Xt[1], Xt[2]
    r = np.empty(n if mode != _NORMAL else 0)
    J = np.zeros((n if mode == _JAC else 0, 3))
    su = W / (2.0 * np.pi)
    sv = H / np.pi
    # normal-equation sums live in scalars so they stay in registers
    cost = 0.0
    h00 = h01 = h02 = h11 = h12 = h22 = 0.0
    b0 = b1 = b2 = 0.0
    for k in range(n):
        u = U[k]
        v_raw = V[k]
        vv = min(max(v_raw, 0.0), H - 1.0)
        u0 = int(u)
        v0 = int(vv)
        fu = u - u0
        fv = vv - v0
        if u0 >= W:
            u0 -= W
        u1 = u0 + 1
        if u1 >= W:
            u1 = 0
        v1 = v0 + 1 if v0 < H - 1 else v0
        w00 = (1.0 - fu) * (1.0 - fv)
        w01 = fu * (1.0 - fv)
        w10 = (1.0 - fu) * fv
        w11 = fu * fv
        res = ref_values[k] - (w00 * stack[v0, u0, 0] + w01 * stack[v0, u1, 0]
                               + w10 * stack[v1, u0, 0] + w11 * stack[v1, u1, 0])
        if mode == _NORMAL:
            cost += res * res
        else:
            r[k] = res
        if mode == _RES:
            continue
        y0, y1, y2 = ya[k], yb[k], yc[k]
        rho2 = y0 * y0 + y1 * y1
        if v_raw < 0.5 or v_raw > H - 1.5 or rho2 <= 0.0:
            continue
        du = (w00 * stack[v0, u0, 1] + w01 * stack[v0, u1, 1]
              + w10 * stack[v1, u0, 1] + w11 * stack[v1, u1, 1])
        dv = (w00 * stack[v0, u0, 2] + w01 * stack[v0, u1, 2]
              + w10 * stack[v1, u0, 2] + w11 * stack[v1, u1, 2])
        inv_rho = 1.0 / np.sqrt(rho2)
        a = su * du * inv_rho * inv_rho
        b = sv * dv * inv_rho
        # tangent gradient g = a * (-y1, y0, 0) - b * (e_z - y2 * y)
        g0 = -a * y1 + b * y2 * y0
        g1 = a * y0 + b * y2 * y1
        g2 = -b + b * y2 * y2
        # J = x cross (R g)
        q0 = R[0, 0] * g0 + R[0, 1] * g1 + R[0, 2] * g2
        q1 = R[1, 0] * g0 + R[1, 1] * g1 + R[1, 2] * g2
        q2 = R[2, 0] * g0 + R[2, 1] * g1 + R[2, 2] * g2
        x0, x1, x2 = xa[k], xb[k], xc[k]
        j0 = x1 * q2 - x2 * q1
        j1 = x2 * q0 - x0 * q2
        j2 = x0 * q1 - x1 * q0
        if mode == _JAC:
            J[k, 0] = j0
            J[k, 1] = j1
            J[k, 2] = j2
        else:
            h00 += j0 * j0
            h01 += j0 * j1
            h02 += j0 * j2
            h11 += j1 * j1
            h12 += j1 * j2
            h22 += j2 * j2
            b0 += j0 * res
            b1 += j1 * res
            b2 += j2 * res
    JtJ = np.array([[h00, h01, h02], [h01, h11, h12], [h02, h12, h22]])
    Jtr = np.array([b0, b1, b2])
    return r, J, cost, JtJ, Jtr


def _project_np(X, R, H, W):
    y = X @ R
    phi = np.arctan2(y[:, 1], y[:, 0])
    theta = np.arcsin(np.clip(y[:, 2], -1.0, 1.0))
    u = np.mod((phi + np.pi) * W / (2.0 * np.pi) - 0.5, W)
    v_raw = (0.5 * np.pi - theta) * H / np.pi - 0.5
    return y, u, v_raw


def direction_gradient_np(y, du, dv, v_raw, W, H):
    """Chain pixel derivatives through the equirectangular projection.

    Returns the tangent gradient at directions ``y`` and the non-polar mask.
    """
    x1, x2, x3 = y[:, 0], y[:, 1], y[:, 2]
    rho2 = x1 * x1 + x2 * x2
    ok = (v_raw >= 0.5) & (v_raw <= H - 1.5) & (rho2 > 0.0)
    rho2 = np.where(ok, rho2, 1.0)
    rho = np.sqrt(rho2)
    grad_phi = np.column_stack([-x2, x1, np.zeros_like(x1)]) / rho2[:, None]
    grad_theta = (np.array([0.0, 0.0, 1.0]) - x3[:, None] * y) / rho[:, None]
    g = ((W / (2.0 * np.pi)) * du)[:, None] * grad_phi - ((H / np.pi) * dv)[:, None] * grad_theta
    g[~ok] = 0.0
    return g, ok


def _photo_args(X, R, img, ref_values, columns):
    X = np.asarray(X, dtype=np.float64)
    Xt = np.ascontiguousarray(X if columns else X.T)
    return (Xt, np.ascontiguousarray(R, dtype=np.float64),
            np.ascontiguousarray(img, dtype=np.float64), np.ascontiguousarray(ref_values, dtype=np.float64))


def _photo_jac_np(Xt, R, stack, ref_values):
    H, W = stack.shape[:2]
    X = Xt.T
    y, u, v_raw = _project_np(X, R, H, W)
    s = _bilinear_np(stack, u, v_raw)
    g, _ = direction_gradient_np(y, s[:, 1], s[:, 2], v_raw, W, H)
    return ref_values - s[:, 0], np.cross(X, g @ R.T)


def photometric_residuals(X, R, img, ref_values, columns=False):
    """``ref_values[k] - img(R.T @ x_k)`` with img an (H, W, >=1) stack (channel 0 used).

    Points are the rows of ``X`` (N, 3), or its columns (3, N) when ``columns``.
    """
    Xt, R, img, ref_values = _photo_args(X, R, img, ref_values, columns)
    if _backend == "numba":
        return _photo_pass_nb(Xt, R, img, ref_values, _RES)[0]
    H, W = img.shape[:2]
    _, u, v_raw = _project_np(Xt.T, R, H, W)
    return ref_values - _bilinear_np(img[:, :, :1], u, v_raw)[:, 0]


def photometric_residuals_jacobian(X, R, stack, ref_values, columns=False):
    """Residuals and d r / d omega for ``R <- exp([omega]x) R``.

    ``stack`` holds intensity, d/du and d/dv as its three channels.  Rows
    within one pixel row of a pole get a zero Jacobian.
    """
    Xt, R, stack, ref_values = _photo_args(X, R, stack, ref_values, columns)
    if _backend == "numba":
        r, J = _photo_pass_nb(Xt, R, stack, ref_values, _JAC)[:2]
        return r, J
    return _photo_jac_np(Xt, R, stack, ref_values)


def photometric_normal_equations(X, R, stack, ref_values, columns=False):
    """``(cost, J.T J, J.T r)`` without materialising J."""
    Xt, R, stack, ref_values = _photo_args(X, R, stack, ref_values, columns)
    if _backend == "numba":
        _, _, cost, JtJ, Jtr = _photo_pass_nb(Xt, R, stack, ref_values, _NORMAL)
        return float(cost), JtJ, Jtr
    r, J = _photo_jac_np(Xt, R, stack, ref_values)
    return float(r @ r), J.T @ J, J.T @ r
