# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled field kernels for moduli below 2**64.

Same contract as ``_pykernels``; larger moduli are delegated there.
"""

from privagg import _pykernels as _py

cdef extern from *:
    """
    typedef unsigned __int128 pa_u128;
    static inline unsigned long long pa_mulmod(unsigned long long a,
                                               unsigned long long b,
                                               unsigned long long p) {
        return (unsigned long long)(((pa_u128)a * b) % p);
    }
    static inline unsigned long long pa_addmod(unsigned long long a,
                                               unsigned long long b,
                                               unsigned long long p) {
        pa_u128 s = (pa_u128)a + b;
        return (unsigned long long)(s >= p ? s - p : s);
    }
    static inline unsigned long long pa_submod(unsigned long long a,
                                               unsigned long long b,
                                               unsigned long long p) {
        return a >= b ? a - b : (unsigned long long)((pa_u128)a + p - b);
    }
    """
    unsigned long long pa_mulmod(unsigned long long a, unsigned long long b, unsigned long long p) nogil
    unsigned long long pa_addmod(unsigned long long a, unsigned long long b, unsigned long long p) nogil
    unsigned long long pa_submod(unsigned long long a, unsigned long long b, unsigned long long p) nogil

from libc.stdlib cimport malloc, free

ctypedef unsigned long long u64

cdef object U64_LIMIT = 1 << 64

OP_ADD = 0
OP_MULC = 1
OP_ADDC = 2
OP_MUL = 3


cdef u64* _load(list xs, Py_ssize_t n) except NULL:
    cdef u64* buf = <u64*> malloc((n if n > 0 else 1) * sizeof(u64))
    if buf == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    for i in range(n):
        buf[i] = <u64> xs[i]
    return buf


def dot(a, b, p):
    if p >= U64_LIMIT:
        return _py.dot(a, b, p)
    cdef u64 q = p
    cdef u64 acc = 0
    cdef Py_ssize_t i, n = min(len(a), len(b))
    cdef list la = a if type(a) is list else list(a)
    cdef list lb = b if type(b) is list else list(b)
    for i in range(n):
        acc = pa_addmod(acc, pa_mulmod(<u64> la[i], <u64> lb[i], q), q)
    return acc


def vec_add(a, b, p):
    if p >= U64_LIMIT:
        return _py.vec_add(a, b, p)
    cdef u64 q = p
    cdef list la = a if type(a) is list else list(a)
    cdef list lb = b if type(b) is list else list(b)
    cdef Py_ssize_t i, n = min(len(la), len(lb))
    cdef list out = [None] * n
    for i in range(n):
        out[i] = pa_addmod(<u64> la[i], <u64> lb[i], q)
    return out


def vec_sub(a, b, p):
    if p >= U64_LIMIT:
        return _py.vec_sub(a, b, p)
    cdef u64 q = p
    cdef list la = a if type(a) is list else list(a)
    cdef list lb = b if type(b) is list else list(b)
    cdef Py_ssize_t i, n = min(len(la), len(lb))
    cdef list out = [None] * n
    for i in range(n):
        out[i] = pa_submod(<u64> la[i], <u64> lb[i], q)
    return out


def vec_scale(a, k, p):
    if p >= U64_LIMIT:
        return _py.vec_scale(a, k, p)
    cdef u64 q = p
    cdef u64 kk = k
    cdef list la = a if type(a) is list else list(a)
    cdef Py_ssize_t i, n = len(la)
    cdef list out = [None] * n
    for i in range(n):
        out[i] = pa_mulmod(<u64> la[i], kk, q)
    return out


def poly_mul(a, b, p):
    if p >= U64_LIMIT:
        return _py.poly_mul(a, b, p)
    cdef Py_ssize_t na = len(a), nb = len(b)
    if na == 0 or nb == 0:
        return []
    cdef u64 q = p
    cdef u64* x = _load(list(a), na)
    cdef u64* y = NULL
    cdef u64* acc = NULL
    cdef Py_ssize_t i, j
    cdef u64 xi
    try:
        y = _load(list(b), nb)
        acc = <u64*> malloc((na + nb - 1) * sizeof(u64))
        if acc == NULL:
            raise MemoryError()
        for i in range(na + nb - 1):
            acc[i] = 0
        for i in range(na):
            xi = x[i]
            if xi == 0:
                continue
            for j in range(nb):
                acc[i + j] = pa_addmod(acc[i + j], pa_mulmod(xi, y[j], q), q)
        return [acc[i] for i in range(na + nb - 1)]
    finally:
        free(x)
        free(y)
        free(acc)


def poly_eval(coeffs, x, p):
    if p >= U64_LIMIT:
        return _py.poly_eval(coeffs, x, p)
    cdef u64 q = p
    cdef u64 xx = x % p
    cdef u64 acc = 0
    cdef list c = coeffs if type(coeffs) is list else list(coeffs)
    cdef Py_ssize_t i
    for i in range(len(c) - 1, -1, -1):
        acc = pa_addmod(pa_mulmod(acc, xx, q), <u64> c[i], q)
    return acc


def extend_consecutive(z, inv, ells, p):
    if p >= U64_LIMIT:
        return _py.extend_consecutive(z, inv, ells, p)
    cdef u64 q = p
    cdef Py_ssize_t m1 = len(z), ni = len(inv), ne = len(ells)
    cdef u64* zz = _load(list(z), m1)
    cdef u64* iv = NULL
    cdef Py_ssize_t i, j, x
    cdef u64 acc
    cdef list out = [None] * ne
    try:
        iv = _load(list(inv), ni)
        for i in range(ne):
            x = m1 + i
            acc = 0
            for j in range(m1):
                acc = pa_addmod(acc, pa_mulmod(zz[j], iv[x - j], q), q)
            out[i] = pa_mulmod(acc, <u64> ells[i], q)
        return out
    finally:
        free(zz)
        free(iv)


def run_circuit(ops, left, right, consts, inputs, p, mul_outputs, const_on):
    if p >= U64_LIMIT:
        return _py.run_circuit(ops, left, right, consts, inputs, p, mul_outputs, const_on)
    cdef u64 q = p
    cdef Py_ssize_t n_in = len(inputs), n_g = len(ops)
    cdef Py_ssize_t total = n_in + n_g
    cdef u64* w = <u64*> malloc((total if total > 0 else 1) * sizeof(u64))
    if w == NULL:
        raise MemoryError()
    cdef list lops = ops, ll = left, lr = right, lk = consts
    cdef list lin = inputs if type(inputs) is list else list(inputs)
    cdef list lmo = None
    cdef bint derive = mul_outputs is not None
    cdef u64 con = 1 if const_on else 0
    cdef Py_ssize_t i, g, t = 0
    cdef int op
    cdef Py_ssize_t l, r
    cdef u64 k
    try:
        if derive:
            lmo = mul_outputs if type(mul_outputs) is list else list(mul_outputs)
        for i in range(n_in):
            w[i] = <u64> lin[i]
        for g in range(n_g):
            op = lops[g]
            l = ll[g]
            i = n_in + g
            if op == 0:
                r = lr[g]
                w[i] = pa_addmod(w[l], w[r], q)
            elif op == 1:
                k = lk[g]
                w[i] = pa_mulmod(w[l], k, q)
            elif op == 2:
                k = lk[g]
                w[i] = pa_addmod(w[l], k * con, q)
            else:
                if derive:
                    w[i] = <u64> lmo[t]
                else:
                    r = lr[g]
                    w[i] = pa_mulmod(w[l], w[r], q)
                t += 1
        return [w[i] for i in range(total)]
    finally:
        free(w)


def bytes_to_field(buf, Py_ssize_t width, p, bound, Py_ssize_t count):
    if p >= U64_LIMIT or width > 8 or bound > U64_LIMIT:
        return _py.bytes_to_field(buf, width, p, bound, count)
    cdef const unsigned char[:] mv = buf
    cdef u64 q = p
    cdef object bnd = bound
    cdef bint full = bound == U64_LIMIT
    cdef u64 b = 0 if full else <u64> bound
    cdef Py_ssize_t n = mv.shape[0], pos = 0, k
    cdef u64 v
    cdef list out = []
    while len(out) < count and pos + width <= n:
        v = 0
        for k in range(width - 1, -1, -1):
            v = (v << 8) | mv[pos + k]
        pos += width
        if full or v < b:
            out.append(v % q)
    return out, pos
