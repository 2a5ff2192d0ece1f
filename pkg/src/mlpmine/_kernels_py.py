"""Pure-Python numeric kernels.

Fallback backend used when the compiled extension ``_kernels_c`` is not
available.  Both backends expose the same functions over flat row-major
``array('d')`` buffers and are kept bit-identical: every kernel performs the
same IEEE-754 double operations in the same order (matrix products accumulate
over the inner dimension in ascending order, and the compiled build disables
FMA contraction).
"""

import math

MASK64 = 0xFFFFFFFFFFFFFFFF

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TO_DOUBLE = 1.0 / 9007199254740992.0  # 2**-53


def splitmix64_next(state):
    """Advance a SplitMix64 state once. Returns (new_state, output_u64)."""
    state = (state + _GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    z = z ^ (z >> 31)
    return state, z


def fill_uniform(state, out, lo, hi):
    """Fill ``out`` with i.i.d. uniform draws in [lo, hi). Returns new state."""
    span = hi - lo
    for i in range(len(out)):
        state, z = splitmix64_next(state)
        v = lo + (z >> 11) * _TO_DOUBLE * span
        if v >= hi:  # guards the rare round-up at the top of a tiny interval
            v = math.nextafter(hi, lo)
        out[i] = v
    return state


def matmul_nn(a, b, out, m, k, n):
    """out[m,n] = a[m,k] . b[k,n]; accumulates over the inner index ascending."""
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


def matmul_tn(a, b, out, m, k, n, acc=0):
    """out[m,n] = transpose(a)[m,k] . b[k,n] with a stored as [k,m].

    With acc nonzero the product is added onto ``out`` instead of
    overwriting it (used for covariance accumulation).
    """
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


def transpose(a, out, rows, cols):
    for i in range(rows):
        arow = i * cols
        for j in range(cols):
            out[j * rows + i] = a[arow + j]


def add_bias_rows(x, bias, m, n):
    """x[i,:] += bias, in place."""
    for i in range(m):
        row = i * n
        for j in range(n):
            x[row + j] += bias[j]


def col_sums(x, out, m, n):
    for j in range(n):
        out[j] = 0.0
    for i in range(m):
        row = i * n
        for j in range(n):
            out[j] += x[row + j]


def relu_fwd(x, out, size):
    for i in range(size):
        v = x[i]
        out[i] = v if v > 0.0 else 0.0


def relu_bwd(x_cached, grad, out, size):
    """Pass gradient where the cached input was > 0 (zero at exactly 0)."""
    for i in range(size):
        out[i] = grad[i] if x_cached[i] > 0.0 else 0.0


def mul_elem(a, b, out, size):
    for i in range(size):
        out[i] = a[i] * b[i]


def scale_elem(a, alpha, out, size):
    for i in range(size):
        out[i] = a[i] * alpha


def mask_leq(u, p, out, size):
    """Binary keep-mask: out[i] = 1.0 where u[i] <= p else 0.0."""
    for i in range(size):
        out[i] = 1.0 if u[i] <= p else 0.0


def softmax_rows(logits, out, m, n):
    """Row-wise softmax with per-row max subtraction."""
    for i in range(m):
        row = i * n
        mx = logits[row]
        for j in range(row + 1, row + n):
            if logits[j] > mx:
                mx = logits[j]
        s = 0.0
        for j in range(n):
            e = math.exp(logits[row + j] - mx)
            out[row + j] = e
            s += e
        inv = 1.0 / s
        for j in range(row, row + n):
            out[j] *= inv


def xent_from_probs(probs, labels, grad_out, m, n):
    """Mean cross-entropy pieces from softmax probabilities.

    Writes grad_out = (probs - onehot) / m and returns the summed negative
    log-likelihood (caller divides by m for the mean loss).
    """
    inv_m = 1.0 / m
    loss_sum = 0.0
    for i in range(m):
        row = i * n
        t = labels[i]
        for j in range(n):
            grad_out[row + j] = probs[row + j] * inv_m
        grad_out[row + t] -= inv_m
        p = probs[row + t]
        if p > 0.0:
            loss_sum += -math.log(p)
        elif p == p:  # p == 0: C log would give -inf, match it
            loss_sum += math.inf
        else:
            loss_sum += p
    return loss_sum


def argmax_rows(x, out_idx, m, n):
    """Row argmax; ties broken by lowest index."""
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


def minmax(x, size):
    """Smallest and largest entry of a non-empty buffer."""
    lo = x[0]
    hi = x[0]
    for i in range(1, size):
        v = x[i]
        if v < lo:
            lo = v
        if v > hi:
            hi = v
    return lo, hi


def abs_sum(x, size):
    s = 0.0
    for i in range(size):
        s += abs(x[i])
    return s


def sq_sum(x, size):
    s = 0.0
    for i in range(size):
        s += x[i] * x[i]
    return s


def add_scaled(dst, src, alpha, size):
    """dst += alpha * src, in place."""
    for i in range(size):
        dst[i] += alpha * src[i]


def add_sign_scaled(dst, src, alpha, size):
    """dst += alpha * sign(src) with sign(0) = 0, in place."""
    for i in range(size):
        v = src[i]
        if v > 0.0:
            dst[i] += alpha
        elif v < 0.0:
            dst[i] -= alpha


def sgd_update(param, grad, lr, size):
    for i in range(size):
        param[i] -= lr * grad[i]


def adam_update(param, grad, m, v, lr, b1, b2, eps, t, size):
    """One Adam step (t is the already-incremented timestep, >= 1)."""
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(size):
        g = grad[i]
        m[i] = b1 * m[i] + (1.0 - b1) * g
        v[i] = b2 * v[i] + (1.0 - b2) * g * g
        mhat = m[i] / c1
        vhat = v[i] / c2
        param[i] -= lr * mhat / (math.sqrt(vhat) + eps)


def row_sq_dists(x, vec, out, m, n):
    """out[i] = sum_j (x[i,j] - vec[j])**2."""
    for i in range(m):
        row = i * n
        s = 0.0
        for j in range(n):
            d = x[row + j] - vec[j]
            s += d * d
        out[i] = s


def rowwise_sq_err(a, b, out, m, n):
    """out[i] = sum_j (a[i,j] - b[i,j])**2."""
    for i in range(m):
        row = i * n
        s = 0.0
        for j in range(row, row + n):
            d = a[j] - b[j]
            s += d * d
        out[i] = s


def jacobi_eigh(a, eigvals, vecs, d, tol, max_sweeps):
    """Cyclic Jacobi eigendecomposition of a symmetric d x d matrix.

    ``a`` is destroyed.  On return eigvals[i] pairs with the eigenvector in
    column i of ``vecs`` (both unordered).  Returns the number of sweeps used,
    or -1 if the off-diagonal norm failed to drop below tol * frobenius(a).
    """
    for i in range(d):
        row = i * d
        for j in range(d):
            vecs[row + j] = 1.0 if i == j else 0.0

    norm = 0.0
    for i in range(d * d):
        norm += a[i] * a[i]
    norm = math.sqrt(norm)
    if norm == 0.0:
        for i in range(d):
            eigvals[i] = 0.0
        return 0

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        off = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                off += a[i * d + j] * a[i * d + j]
        off = math.sqrt(2.0 * off)
        if off <= tol * norm:
            converged = True
            break
        sweeps += 1
        # rotate away small elements eagerly during early sweeps only
        thresh = 0.2 * off * off / (d * d) if sweeps < 4 else 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p * d + q]
                g = 100.0 * abs(apq)
                if sweeps > 4 and abs(a[p * d + p]) + g == abs(a[p * d + p]) \
                        and abs(a[q * d + q]) + g == abs(a[q * d + q]):
                    a[p * d + q] = 0.0
                    a[q * d + p] = 0.0
                    continue
                if apq * apq <= thresh:
                    continue
                theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- G^T A G ; columns first, then rows
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
