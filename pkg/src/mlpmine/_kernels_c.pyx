# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numeric kernels.

Mirrors _kernels_py exactly: same signatures, same IEEE-754 operation order
(matrix products accumulate over the inner index ascending; the build turns
FMA contraction off), so results are bit-identical to the pure-Python
backend on the same platform.
"""

from cython.parallel import prange

from libc.math cimport exp, fabs, log, nextafter, pow, sqrt

MASK64 = 0xFFFFFFFFFFFFFFFF

cdef unsigned long long _GAMMA = 0x9E3779B97F4A7C15ULL
cdef unsigned long long _MIX1 = 0xBF58476D1CE4E5B9ULL
cdef unsigned long long _MIX2 = 0x94D049BB133111EBULL
cdef double _TO_DOUBLE = 1.0 / 9007199254740992.0  # 2**-53

# matrices this size or larger go through the threaded gemm path
cdef Py_ssize_t PAR_MIN_FLOPS = 262144


cdef inline unsigned long long _mix(unsigned long long state) nogil:
    cdef unsigned long long z = state
    z = (z ^ (z >> 30)) * _MIX1
    z = (z ^ (z >> 27)) * _MIX2
    return z ^ (z >> 31)


def splitmix64_next(state):
    """Advance a SplitMix64 state once. Returns (new_state, output_u64)."""
    cdef unsigned long long s = state
    s = s + _GAMMA
    return s, _mix(s)


def fill_uniform(state, double[::1] out, double lo, double hi):
    """Fill ``out`` with i.i.d. uniform draws in [lo, hi). Returns new state."""
    cdef unsigned long long s = state
    cdef double span = hi - lo
    cdef double v
    cdef Py_ssize_t i
    cdef unsigned long long z
    for i in range(out.shape[0]):
        s = s + _GAMMA
        z = _mix(s)
        v = lo + <double>(z >> 11) * _TO_DOUBLE * span
        if v >= hi:
            v = nextafter(hi, lo)
        out[i] = v
    return s


def matmul_nn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    """out[m,n] = a[m,k] . b[k,n]; accumulates over the inner index ascending."""
    cdef Py_ssize_t i, j, l, arow, orow, brow
    cdef double aval
    if m * k * n >= PAR_MIN_FLOPS and m > 1:
        for i in prange(m, nogil=True, schedule="static"):
            arow = i * k
            orow = i * n
            for j in range(orow, orow + n):
                out[j] = 0.0
            for l in range(k):
                aval = a[arow + l]
                brow = l * n
                for j in range(n):
                    out[orow + j] += aval * b[brow + j]
    else:
        with nogil:
            for i in range(m):
                arow = i * k
                orow = i * n
                for j in range(orow, orow + n):
                    out[j] = 0.0
                for l in range(k):
                    aval = a[arow + l]
                    brow = l * n
                    for j in range(n):
                        out[orow + j] += aval * b[brow + j]


def matmul_tn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t m, Py_ssize_t k, Py_ssize_t n, int acc=0):
    """out[m,n] = transpose(a)[m,k] . b[k,n] with a stored as [k,m].

    With acc nonzero the product is added onto ``out`` instead of
    overwriting it (used for covariance accumulation).
    """
    cdef Py_ssize_t i, j, l, orow, brow
    cdef double aval
    if m * k * n >= PAR_MIN_FLOPS and m > 1:
        for i in prange(m, nogil=True, schedule="static"):
            orow = i * n
            if not acc:
                for j in range(orow, orow + n):
                    out[j] = 0.0
            for l in range(k):
                aval = a[l * m + i]
                brow = l * n
                for j in range(n):
                    out[orow + j] += aval * b[brow + j]
    else:
        with nogil:
            for i in range(m):
                orow = i * n
                if not acc:
                    for j in range(orow, orow + n):
                        out[j] = 0.0
                for l in range(k):
                    aval = a[l * m + i]
                    brow = l * n
                    for j in range(n):
                        out[orow + j] += aval * b[brow + j]


def transpose(double[::1] a, double[::1] out, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t i, j, arow
    with nogil:
        for i in range(rows):
            arow = i * cols
            for j in range(cols):
                out[j * rows + i] = a[arow + j]


def add_bias_rows(double[::1] x, double[::1] bias, Py_ssize_t m, Py_ssize_t n):
    """x[i,:] += bias, in place."""
    cdef Py_ssize_t i, j, row
    with nogil:
        for i in range(m):
            row = i * n
            for j in range(n):
                x[row + j] += bias[j]


def col_sums(double[::1] x, double[::1] out, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t i, j, row
    with nogil:
        for j in range(n):
            out[j] = 0.0
        for i in range(m):
            row = i * n
            for j in range(n):
                out[j] += x[row + j]


def relu_fwd(double[::1] x, double[::1] out, Py_ssize_t size):
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(size):
            v = x[i]
            out[i] = v if v > 0.0 else 0.0


def relu_bwd(double[::1] x_cached, double[::1] grad, double[::1] out, Py_ssize_t size):
    """Pass gradient where the cached input was > 0 (zero at exactly 0)."""
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            out[i] = grad[i] if x_cached[i] > 0.0 else 0.0


def mul_elem(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t size):
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            out[i] = a[i] * b[i]


def scale_elem(double[::1] a, double alpha, double[::1] out, Py_ssize_t size):
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            out[i] = a[i] * alpha


def mask_leq(double[::1] u, double p, double[::1] out, Py_ssize_t size):
    """Binary keep-mask: out[i] = 1.0 where u[i] <= p else 0.0."""
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            out[i] = 1.0 if u[i] <= p else 0.0


def softmax_rows(double[::1] logits, double[::1] out, Py_ssize_t m, Py_ssize_t n):
    """Row-wise softmax with per-row max subtraction."""
    cdef Py_ssize_t i, j, row
    cdef double mx, s, e, inv
    with nogil:
        for i in range(m):
            row = i * n
            mx = logits[row]
            for j in range(row + 1, row + n):
                if logits[j] > mx:
                    mx = logits[j]
            s = 0.0
            for j in range(n):
                e = exp(logits[row + j] - mx)
                out[row + j] = e
                s += e
            inv = 1.0 / s
            for j in range(row, row + n):
                out[j] *= inv


def xent_from_probs(double[::1] probs, long long[::1] labels, double[::1] grad_out,
                    Py_ssize_t m, Py_ssize_t n):
    """Mean cross-entropy pieces from softmax probabilities.

    Writes grad_out = (probs - onehot) / m and returns the summed negative
    log-likelihood (caller divides by m for the mean loss).
    """
    cdef double inv_m = 1.0 / m
    cdef double loss_sum = 0.0
    cdef Py_ssize_t i, j, row
    cdef long long t
    with nogil:
        for i in range(m):
            row = i * n
            t = labels[i]
            for j in range(n):
                grad_out[row + j] = probs[row + j] * inv_m
            grad_out[row + t] -= inv_m
            loss_sum += -log(probs[row + t])
    return loss_sum


def argmax_rows(double[::1] x, long long[::1] out_idx, Py_ssize_t m, Py_ssize_t n):
    """Row argmax; ties broken by lowest index."""
    cdef Py_ssize_t i, j, row, bj
    cdef double best, v
    with nogil:
        for i in range(m):
            row = i * n
            best = x[row]
            bj = 0
            for j in range(1, n):
                v = x[row + j]
                if v > best:
                    best = v
                    bj = j
            out_idx[i] = bj


def minmax(double[::1] x, Py_ssize_t size):
    """Smallest and largest entry of a non-empty buffer."""
    cdef double lo = x[0]
    cdef double hi = x[0]
    cdef double v
    cdef Py_ssize_t i
    with nogil:
        for i in range(1, size):
            v = x[i]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
    return lo, hi


def abs_sum(double[::1] x, Py_ssize_t size):
    cdef double s = 0.0
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            s += fabs(x[i])
    return s


def sq_sum(double[::1] x, Py_ssize_t size):
    cdef double s = 0.0
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            s += x[i] * x[i]
    return s


def add_scaled(double[::1] dst, double[::1] src, double alpha, Py_ssize_t size):
    """dst += alpha * src, in place."""
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            dst[i] += alpha * src[i]


def add_sign_scaled(double[::1] dst, double[::1] src, double alpha, Py_ssize_t size):
    """dst += alpha * sign(src) with sign(0) = 0, in place."""
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        for i in range(size):
            v = src[i]
            if v > 0.0:
                dst[i] += alpha
            elif v < 0.0:
                dst[i] -= alpha


def sgd_update(double[::1] param, double[::1] grad, double lr, Py_ssize_t size):
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            param[i] -= lr * grad[i]


def adam_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                double lr, double b1, double b2, double eps, long long t, Py_ssize_t size):
    """One Adam step (t is the already-incremented timestep, >= 1)."""
    cdef double c1 = 1.0 - pow(b1, <double>t)
    cdef double c2 = 1.0 - pow(b2, <double>t)
    cdef double g, mhat, vhat
    cdef Py_ssize_t i
    with nogil:
        for i in range(size):
            g = grad[i]
            m[i] = b1 * m[i] + (1.0 - b1) * g
            v[i] = b2 * v[i] + (1.0 - b2) * g * g
            mhat = m[i] / c1
            vhat = v[i] / c2
            param[i] -= lr * mhat / (sqrt(vhat) + eps)


def row_sq_dists(double[::1] x, double[::1] vec, double[::1] out,
                 Py_ssize_t m, Py_ssize_t n):
    """out[i] = sum_j (x[i,j] - vec[j])**2."""
    cdef Py_ssize_t i, j, row
    cdef double s, d
    with nogil:
        for i in range(m):
            row = i * n
            s = 0.0
            for j in range(n):
                d = x[row + j] - vec[j]
                s += d * d
            out[i] = s


def rowwise_sq_err(double[::1] a, double[::1] b, double[::1] out,
                   Py_ssize_t m, Py_ssize_t n):
    """out[i] = sum_j (a[i,j] - b[i,j])**2."""
    cdef Py_ssize_t i, j, row
    cdef double s, d
    with nogil:
        for i in range(m):
            row = i * n
            s = 0.0
            for j in range(row, row + n):
                d = a[j] - b[j]
                s += d * d
            out[i] = s


def jacobi_eigh(double[::1] a, double[::1] eigvals, double[::1] vecs,
                Py_ssize_t d, double tol, int max_sweeps):
    """Cyclic Jacobi eigendecomposition of a symmetric d x d matrix.

    ``a`` is destroyed.  On return eigvals[i] pairs with the eigenvector in
    column i of ``vecs`` (both unordered).  Returns the number of sweeps used,
    or -1 if the off-diagonal norm failed to drop below tol * frobenius(a).
    """
    cdef Py_ssize_t i, j, p, q, row
    cdef int sweeps = 0
    cdef bint converged = False
    cdef double norm, off, thresh, apq, g, theta, t, c, s
    cdef double aip, aiq, apj, aqj, vip, viq

    with nogil:
        for i in range(d):
            row = i * d
            for j in range(d):
                vecs[row + j] = 1.0 if i == j else 0.0

        norm = 0.0
        for i in range(d * d):
            norm += a[i] * a[i]
        norm = sqrt(norm)
        if norm == 0.0:
            converged = True

        while not converged and sweeps < max_sweeps:
            off = 0.0
            for i in range(d):
                for j in range(i + 1, d):
                    off += a[i * d + j] * a[i * d + j]
            off = sqrt(2.0 * off)
            if off <= tol * norm:
                converged = True
                break
            sweeps += 1
            thresh = 0.2 * off * off / (d * d) if sweeps < 4 else 0.0
            for p in range(d - 1):
                for q in range(p + 1, d):
                    apq = a[p * d + q]
                    g = 100.0 * fabs(apq)
                    if sweeps > 4 and fabs(a[p * d + p]) + g == fabs(a[p * d + p]) \
                            and fabs(a[q * d + q]) + g == fabs(a[q * d + q]):
                        a[p * d + q] = 0.0
                        a[q * d + p] = 0.0
                        continue
                    if apq * apq <= thresh:
                        continue
                    theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq)
                    if theta >= 0.0:
                        t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for i in range(d):
                        aip = a[i * d + p]
                        aiq = a[i * d + q]
                        a[i * d + p] = c * aip - s * aiq
                        a[i * d + q] = s * aip + c * aiq
                    for j in range(d):
                        apj = a[p * d + j]
                        aqj = a[q * d + j]
                        a[p * d + j] = c * apj - s * aqj
                        a[q * d + j] = s * apj + c * aqj
                    for i in range(d):
                        vip = vecs[i * d + p]
                        viq = vecs[i * d + q]
                        vecs[i * d + p] = c * vip - s * viq
                        vecs[i * d + q] = s * vip + c * viq

        for i in range(d):
            eigvals[i] = a[i * d + i]
    return sweeps if converged else -1
