# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: per-point side scoring, hypothesis gains, OA distances.

Mirrors ``cuboidfit._numpy_core`` operation for operation. Every per-hypothesis
reduction runs sequentially over points, so results do not depend on the
number of OpenMP threads.
"""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport cos, exp, fabs, log, sin, sqrt, INFINITY

cdef double ON_SURFACE_TOL = 1e-9
cdef int NEXT1[3]
cdef int NEXT2[3]
NEXT1[:] = [1, 2, 0]
NEXT2[:] = [2, 0, 1]


cdef struct Params:
    double tau
    double beta
    double tau_c
    double m
    double b
    int oa


cdef inline double f_in(double d2, const Params* p) noexcept nogil:
    cdef double z = p.beta * d2 / p.tau - p.beta
    if z > 710.0:
        # exp overflows to inf here, so the sigmoid is exactly 0
        return 0.0
    return 1.0 / (1.0 + exp(z))


cdef inline double f_occ(double d2, const Params* p) noexcept nogil:
    if d2 < p.tau_c:
        return 1.0 / (1.0 + exp(p.beta - p.beta * d2 / p.tau))
    return p.m * d2 + p.b


cdef inline double dot3(const double* x, const double* y) noexcept nogil:
    return x[0] * y[0] + x[1] * y[1] + x[2] * y[2]


cdef inline int faces_hit(const double* l, const double* v, const double* a, int* hit) noexcept nogil:
    # Which of the six faces cut the segment l + lam * v, 0 < lam <= 1. A point
    # within ON_SURFACE_TOL of a face plane is never occluded by that face.
    cdef int s, c, j1, j2, n = 0
    cdef double plane, lam, x1, x2, num
    for s in range(6):
        hit[s] = 0
        c = s >> 1
        if v[c] == 0.0:
            continue
        if s & 1:
            plane = -a[c]
        else:
            plane = a[c]
        if fabs(plane - l[c]) <= ON_SURFACE_TOL:
            continue  # the point lies on this face plane
        lam = (plane - l[c]) / v[c]
        if lam > 0.0 and lam <= 1.0:
            j1 = NEXT1[c]
            j2 = NEXT2[c]
            x1 = l[j1] + lam * v[j1]
            x2 = l[j2] + lam * v[j2]
            if fabs(x1) <= a[j1] + ON_SURFACE_TOL and fabs(x2) <= a[j2] + ON_SURFACE_TOL:
                hit[s] = 1
                n += 1
    return n


cdef inline int segment_near(const double* l, const double* cam, double radius_sq) noexcept nogil:
    # Does the segment l -> cam pass within the cuboid's bounding sphere?
    cdef double v[3]
    cdef double lv, vv, ll
    v[0] = cam[0] - l[0]
    v[1] = cam[1] - l[1]
    v[2] = cam[2] - l[2]
    ll = dot3(l, l)
    lv = dot3(l, v)
    vv = dot3(v, v)
    if lv >= 0.0:
        return ll <= radius_sq
    if -lv >= vv:
        return dot3(cam, cam) <= radius_sq
    return ll * vv - lv * lv <= radius_sq * vv


cdef int occluded_terms(const double* l, const double* cam, const double* a,
                        const Params* p, double* out_min, double* out_max) noexcept nogil:
    # Scores against the six sides when at least one face may occlude. f_IO
    # decreases with the squared side distance on both branches, so only the
    # extreme distances need a sigmoid. The minimum is exact when negative; a
    # nonnegative minimum never changes the combined score and is left at +inf.
    cdef double v[3]
    cdef double ex[3]
    cdef int hit[6]
    cdef int j, s, c
    cdef double e, exsum = 0.0, plane, d2, mx, g
    cdef double best_non = INFINITY
    cdef double best_occ = INFINITY
    cdef double worst_occ = -1.0
    for j in range(3):
        v[j] = cam[j] - l[j]
    if faces_hit(l, v, a, hit) == 0:
        return 0
    for j in range(3):
        e = fabs(l[j]) - a[j]
        ex[j] = e * e if e > 0.0 else 0.0
        exsum += ex[j]
    for s in range(6):
        c = s >> 1
        plane = -a[c] if s & 1 else a[c]
        d2 = (l[c] - plane) * (l[c] - plane) + (exsum - ex[c])
        if hit[s]:
            if d2 < best_occ:
                best_occ = d2
            if d2 > worst_occ:
                worst_occ = d2
        elif d2 < best_non:
            best_non = d2
    mx = -INFINITY
    if best_non < INFINITY:
        mx = f_in(best_non, p)
    g = f_in(best_occ, p) - f_occ(best_occ, p)
    if g > mx:
        mx = g
    out_max[0] = mx
    out_min[0] = f_in(worst_occ, p) - f_occ(worst_occ, p)
    return 1


cdef inline int side_terms(const double* y, const double* R, const double* t,
                           const double* a, const double* cam, double radius_sq,
                           const Params* p, double* surf_d2,
                           double* out_min, double* out_max) noexcept nogil:
    # Returns 1 with out_min/out_max filled when some face occludes the point.
    # Otherwise returns 0 and only surf_d2 is set: without occlusion the
    # nearest side is the nearest surface point.
    cdef double px = y[0] - t[0]
    cdef double py = y[1] - t[1]
    cdef double pz = y[2] - t[2]
    cdef double l[3]
    cdef double e0, e1, e2, inner, exsum = 0.0
    l[0] = R[0] * px + R[3] * py + R[6] * pz
    l[1] = R[1] * px + R[4] * py + R[7] * pz
    l[2] = R[2] * px + R[5] * py + R[8] * pz
    e0 = fabs(l[0]) - a[0]
    e1 = fabs(l[1]) - a[1]
    e2 = fabs(l[2]) - a[2]
    inner = -e0
    if -e1 < inner:
        inner = -e1
    if -e2 < inner:
        inner = -e2
    if inner < 0.0:
        inner = 0.0
    if e0 > 0.0:
        exsum += e0 * e0
    if e1 > 0.0:
        exsum += e1 * e1
    if e2 > 0.0:
        exsum += e2 * e2
    surf_d2[0] = inner * inner + exsum
    if not p.oa or not segment_near(l, cam, radius_sq):
        return 0
    return occluded_terms(l, cam, a, p, out_min, out_max)


cdef inline double combined(double mn, double mx) noexcept nogil:
    if mx == -INFINITY:
        return 0.0
    if mn < 0.0:
        return mn
    return mx


cdef Params make_params(double tau, double beta, double tau_c, double m, double b, bint oa):
    cdef Params p
    p.tau = tau
    p.beta = beta
    p.tau_c = tau_c
    p.m = m
    p.b = b
    p.oa = 1 if oa else 0
    return p


cdef inline double bounding_radius_sq(const double* a) noexcept nogil:
    cdef double r = sqrt(dot3(a, a)) + 2.0 * ON_SURFACE_TOL
    return r * r


cdef inline void camera_local(const double* R, const double* t, double* cam) noexcept nogil:
    cdef int j
    for j in range(3):
        cam[j] = -(R[j] * t[0] + R[3 + j] * t[1] + R[6 + j] * t[2])


def cuboid_terms(const double[:, ::1] points, const double[:, ::1] R, const double[::1] t,
                 const double[::1] a, double tau, double beta, double tau_c,
                 double m, double b, bint occlusion_aware):
    cdef Py_ssize_t n = points.shape[0], i
    cdef Params p = make_params(tau, beta, tau_c, m, b, occlusion_aware)
    cdef double cam[3]
    cdef double sd2
    cdef double r2 = bounding_radius_sq(&a[0])
    camera_local(&R[0, 0], &t[0], cam)
    out_min = np.empty(n)
    out_max = np.empty(n)
    cdef double[::1] omn = out_min
    cdef double[::1] omx = out_max
    with nogil:
        for i in range(n):
            if not side_terms(&points[i, 0], &R[0, 0], &t[0], &a[0], cam, r2, &p,
                              &sd2, &omn[i], &omx[i]):
                omn[i] = INFINITY
                omx[i] = f_in(sd2, &p)
    return out_min, out_max


cdef double gain_one(const double* points, Py_ssize_t n, const double* R, const double* t,
                     const double* a, const double* smin, const double* smax,
                     const double* old, const double* skip_d2, const Params* p) noexcept nogil:
    cdef double cam[3]
    cdef Py_ssize_t i
    cdef double mn, mx, sd2, total = 0.0
    cdef double r2 = bounding_radius_sq(a)
    camera_local(R, t, cam)
    for i in range(n):
        if not side_terms(&points[3 * i], R, t, a, cam, r2, p, &sd2, &mn, &mx):
            if sd2 >= skip_d2[i]:
                # unoccluded and no better than the current model: adds exactly 0
                continue
            mn = INFINITY
            mx = f_in(sd2, p)
        if smin[i] < mn:
            mn = smin[i]
        if smax[i] > mx:
            mx = smax[i]
        total += combined(mn, mx) - old[i]
    return total


def hypothesis_gains(const double[:, ::1] points, const double[:, :, ::1] rotations,
                     const double[:, ::1] translations, const double[:, ::1] sizes,
                     const double[::1] state_min, const double[::1] state_max,
                     double tau, double beta, double tau_c, double m, double b,
                     bint occlusion_aware, int num_threads=1):
    cdef Py_ssize_t H = rotations.shape[0], n = points.shape[0], h, i
    cdef Params p = make_params(tau, beta, tau_c, m, b, occlusion_aware)
    old_arr = np.empty(n)
    skip_arr = np.empty(n)
    cdef double[::1] old = old_arr
    cdef double[::1] skip = skip_arr
    cdef double s
    # beyond this squared distance f_in is exactly 0 (see f_in)
    cdef double cutoff = tau * (1.0 + 710.0 / beta)
    for i in range(n):
        old[i] = combined(state_min[i], state_max[i])
        s = state_max[i]
        if state_min[i] < 0.0 and s != -INFINITY:
            skip[i] = -INFINITY
        elif s <= 0.0:
            # empty or zero state: only a nonzero new score changes anything
            skip[i] = cutoff
        else:
            # squared distance beyond which the soft inlier score drops below s
            skip[i] = tau * (1.0 + log(1.0 / s - 1.0) / beta) + 1e-9 * tau
    gains = np.empty(H)
    cdef double[::1] g = gains
    if num_threads < 1:
        num_threads = 1
    if n == 0:
        gains.fill(0.0)
        return gains
    for h in prange(H, nogil=True, num_threads=num_threads, schedule="dynamic"):
        g[h] = gain_one(&points[0, 0], n, &rotations[h, 0, 0], &translations[h, 0],
                        &sizes[h, 0], &state_min[0], &state_max[0], &old[0], &skip[0], &p)
    return gains


def oa_distances(const double[:, ::1] points, const double[:, :, ::1] rotations,
                 const double[:, ::1] translations, const double[:, ::1] sizes):
    cdef Py_ssize_t K = rotations.shape[0], n = points.shape[0], i, k
    out = np.empty(n)
    cdef double[::1] o = out
    if K == 0:
        out.fill(np.inf)
        return out
    cams = np.empty((K, 3))
    cdef double[:, ::1] cam = cams
    cdef int j, s, c, j1, j2
    for k in range(K):
        for j in range(3):
            cam[k, j] = -(rotations[k, 0, j] * translations[k, 0]
                          + rotations[k, 1, j] * translations[k, 1]
                          + rotations[k, 2, j] * translations[k, 2])
    cdef double l[3]
    cdef double v[3]
    cdef double ex[3]
    cdef double px, py, pz, e, exsum, inner, surf, best_surf, occ, plane, d2, lam, x1, x2
    with nogil:
        for i in range(n):
            best_surf = INFINITY
            occ = 0.0
            for k in range(K):
                px = points[i, 0] - translations[k, 0]
                py = points[i, 1] - translations[k, 1]
                pz = points[i, 2] - translations[k, 2]
                exsum = 0.0
                inner = INFINITY
                for j in range(3):
                    l[j] = rotations[k, 0, j] * px + rotations[k, 1, j] * py + rotations[k, 2, j] * pz
                    v[j] = cam[k, j] - l[j]
                    e = fabs(l[j]) - sizes[k, j]
                    if -e < inner:
                        inner = -e
                    if e > 0.0:
                        ex[j] = e * e
                    else:
                        ex[j] = 0.0
                    exsum += ex[j]
                if inner < 0.0:
                    inner = 0.0
                surf = inner * inner + exsum
                if surf < best_surf:
                    best_surf = surf
                for s in range(6):
                    c = s >> 1
                    if v[c] == 0.0:
                        continue
                    if s & 1:
                        plane = -sizes[k, c]
                    else:
                        plane = sizes[k, c]
                    if fabs(plane - l[c]) <= ON_SURFACE_TOL:
                        continue
                    lam = (plane - l[c]) / v[c]
                    if not (lam > 0.0 and lam <= 1.0):
                        continue
                    j1 = (c + 1) % 3
                    j2 = (c + 2) % 3
                    x1 = l[j1] + lam * v[j1]
                    x2 = l[j2] + lam * v[j2]
                    if fabs(x1) <= sizes[k, j1] + ON_SURFACE_TOL and fabs(x2) <= sizes[k, j2] + ON_SURFACE_TOL:
                        d2 = (l[c] - plane) * (l[c] - plane) + (exsum - ex[c])
                        if d2 > occ:
                            occ = d2
            if occ > best_surf:
                o[i] = sqrt(occ)
            else:
                o[i] = sqrt(best_surf)
    return out


# ---------------------------------------------------------------------------
# minimal solver


# |x| below this is at the mid-plane kink of |x| and gets a zero subgradient
DEF KINK_TOL = 1e-12
# gradient entries this small are roundoff of an exact zero; Adam would
# otherwise normalise them into full-size steps
DEF GRAD_FLOOR = 1e-12

cdef inline double sgn(double x) noexcept nogil:
    return (x > KINK_TOL) - (x < -KINK_TOL)


cdef inline void skew(const double* v, double* K) noexcept nogil:
    K[0] = 0.0
    K[1] = -v[2]
    K[2] = v[1]
    K[3] = v[2]
    K[4] = 0.0
    K[5] = -v[0]
    K[6] = -v[1]
    K[7] = v[0]
    K[8] = 0.0


cdef inline void matmul3(const double* A, const double* B, double* out) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


cdef void rodrigues_c(const double* r, double* R, double* dR) noexcept nogil:
    # R and dR/dr_i (dR[9 * i:9 * i + 9]), all row-major
    cdef double th2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2]
    cdef double th = sqrt(th2)
    cdef double k[3]
    cdef double K[9]
    cdef double K2[9]
    cdef double A[9]
    cdef double rx[9]
    cdef double cr[3]
    cdef double col[3]
    cdef double e[3]
    cdef double s, c
    cdef int i, j
    if th < 1e-8:
        skew(r, K)
        for j in range(9):
            R[j] = K[j]
        R[0] += 1.0
        R[4] += 1.0
        R[8] += 1.0
        for i in range(3):
            e[0] = 0.0
            e[1] = 0.0
            e[2] = 0.0
            e[i] = 1.0
            skew(e, &dR[9 * i])
        return
    for j in range(3):
        k[j] = r[j] / th
    skew(k, K)
    matmul3(K, K, K2)
    s = sin(th)
    c = 1.0 - cos(th)
    for j in range(9):
        R[j] = s * K[j] + c * K2[j]
    R[0] += 1.0
    R[4] += 1.0
    R[8] += 1.0
    skew(r, rx)
    for i in range(3):
        # column i of (I - R)
        for j in range(3):
            col[j] = (1.0 if i == j else 0.0) - R[3 * j + i]
        cr[0] = r[1] * col[2] - r[2] * col[1]
        cr[1] = r[2] * col[0] - r[0] * col[2]
        cr[2] = r[0] * col[1] - r[1] * col[0]
        skew(cr, K)
        for j in range(9):
            A[j] = (r[i] * rx[j] + K[j]) / th2
        matmul3(A, R, &dR[9 * i])


cdef double loss_grad(const double* S, Py_ssize_t C, const double* x, double* g) noexcept nogil:
    cdef double R[9]
    cdef double dR[27]
    cdef double l[3]
    cdef double q[3]
    cdef double pos[3]
    cdef double gl[3]
    cdef double p[3]
    cdef double ga[3]
    cdef double gt[3]
    cdef double gr[3]
    cdef const double* a = x
    cdef const double* t = x + 6
    cdef double inner, d2, sum_d2 = 0.0, size_sum, dl
    cdef Py_ssize_t n
    cdef int j, k, i, idx
    rodrigues_c(x + 3, R, dR)
    for j in range(3):
        ga[j] = 0.0
        gt[j] = 0.0
        gr[j] = 0.0
    for n in range(C):
        for j in range(3):
            p[j] = S[3 * n + j] - t[j]
        idx = 0
        for k in range(3):
            l[k] = p[0] * R[k] + p[1] * R[3 + k] + p[2] * R[6 + k]
            q[k] = fabs(l[k]) - a[k]
            pos[k] = q[k] if q[k] > 0.0 else 0.0
            if q[k] > q[idx]:
                idx = k
        inner = -q[idx]
        if inner < 0.0:
            inner = 0.0
        d2 = inner * inner + pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]
        sum_d2 += d2
        for k in range(3):
            gl[k] = 2.0 * pos[k] * sgn(l[k])
            ga[k] -= 2.0 * pos[k]
        gl[idx] -= 2.0 * inner * sgn(l[idx])
        ga[idx] += 2.0 * inner
        for j in range(3):
            gt[j] += R[3 * j] * gl[0] + R[3 * j + 1] * gl[1] + R[3 * j + 2] * gl[2]
        for i in range(3):
            for k in range(3):
                dl = p[0] * dR[9 * i + k] + p[1] * dR[9 * i + 3 + k] + p[2] * dR[9 * i + 6 + k]
                gr[i] += gl[k] * dl
    size_sum = a[0] + a[1] + a[2]
    for j in range(3):
        g[j] = size_sum * ga[j] + sum_d2
        g[3 + j] = size_sum * gr[j]
        g[6 + j] = -size_sum * gt[j]
    return sum_d2 * size_sum


cdef void adam_one(const double* S, Py_ssize_t C, double* x, int iterations, double lr,
                   double a_min, double a_max, double b1, double b2, double eps,
                   double* best_x, double* best_loss, double* init_loss) noexcept nogil:
    cdef double m[9]
    cdef double v[9]
    cdef double g[9]
    cdef double loss, mhat, vhat, c1 = 1.0, c2 = 1.0
    cdef int k, j
    for j in range(9):
        m[j] = 0.0
        v[j] = 0.0
        best_x[j] = x[j]
    best_loss[0] = INFINITY
    for k in range(iterations + 1):
        loss = loss_grad(S, C, x, g)
        if k == 0:
            init_loss[0] = loss
        if loss < best_loss[0]:
            best_loss[0] = loss
            for j in range(9):
                best_x[j] = x[j]
        if k == iterations:
            break
        c1 *= b1
        c2 *= b2
        for j in range(9):
            if fabs(g[j]) <= GRAD_FLOOR:
                g[j] = 0.0
            m[j] = b1 * m[j] + (1.0 - b1) * g[j]
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j]
            mhat = m[j] / (1.0 - c1)
            vhat = v[j] / (1.0 - c2)
            x[j] = x[j] - lr * mhat / (sqrt(vhat) + eps)
        for j in range(3):
            if x[j] < a_min:
                x[j] = a_min
            elif x[j] > a_max:
                x[j] = a_max


def adam_fit(const double[:, :, ::1] S, double[:, ::1] x0, int iterations, double lr,
             double a_min, double a_max, double b1, double b2, double eps, int num_threads=1):
    """Batched Adam on ``||F||_1``; ``x0`` rows are (sizes, axis-angle, translation)."""
    cdef Py_ssize_t H = S.shape[0], C = S.shape[1], h
    x = np.array(x0, dtype=np.float64, order="C")
    best = np.empty((H, 9))
    best_loss = np.empty(H)
    init_loss = np.empty(H)
    cdef double[:, ::1] xv = x
    cdef double[:, ::1] bv = best
    cdef double[::1] blv = best_loss
    cdef double[::1] ilv = init_loss
    if num_threads < 1:
        num_threads = 1
    if H == 0:
        return best, best_loss, init_loss
    for h in prange(H, nogil=True, num_threads=num_threads, schedule="static"):
        adam_one(&S[h, 0, 0], C, &xv[h, 0], iterations, lr, a_min, a_max, b1, b2, eps,
                 &bv[h, 0], &blv[h], &ilv[h])
    return best, best_loss, init_loss
