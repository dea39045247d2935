"""Pure-Python implementations of the hot field kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same
signature and the same results. Vectors are lists of canonical ints.
"""

from __future__ import annotations

OP_ADD = 0
OP_MULC = 1
OP_ADDC = 2
OP_MUL = 3


def dot(a, b, p):
    return sum(x * y for x, y in zip(a, b)) % p


def vec_add(a, b, p):
    return [(x + y) % p for x, y in zip(a, b)]


def vec_sub(a, b, p):
    return [(x - y) % p for x, y in zip(a, b)]


def vec_scale(a, k, p):
    return [(x * k) % p for x in a]


def poly_mul(a, b, p):
    if not a or not b:
        return []
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return [c % p for c in out]


def poly_eval(coeffs, x, p):
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % p
    return acc


def extend_consecutive(z, inv, ells, p):
    """Values at m+1..2m of the polynomial through (j, y_j), j = 0..m.

    ``z[j]`` is the barycentric-weighted value ``w_j * y_j``; ``inv[d]`` is
    the inverse of ``d`` for ``1 <= d <= 2m``; ``ells[i]`` is the node
    polynomial evaluated at ``m + 1 + i``.
    """
    m = len(z) - 1
    out = []
    for i, ell in enumerate(ells):
        x = m + 1 + i
        acc = 0
        for j, zj in enumerate(z):
            acc += zj * inv[x - j]
        out.append(acc % p * ell % p)
    return out


def run_circuit(ops, left, right, consts, inputs, p, mul_outputs, const_on):
    """Evaluate a gate list over ``inputs``.

    When ``mul_outputs`` is given, the t-th multiplication gate takes its
    output from ``mul_outputs[t]`` instead of multiplying. ``const_on``
    scales AddConst constants (0 on non-leader share holders).
    """
    w = list(inputs)
    t = 0
    for op, l, r, k in zip(ops, left, right, consts):
        if op == OP_ADD:
            w.append((w[l] + w[r]) % p)
        elif op == OP_MULC:
            w.append(w[l] * k % p)
        elif op == OP_ADDC:
            w.append((w[l] + k * const_on) % p)
        else:
            if mul_outputs is None:
                w.append(w[l] * w[r] % p)
            else:
                w.append(mul_outputs[t])
            t += 1
    return w


def bytes_to_field(buf, width, p, bound, count):
    """Rejection-sample up to ``count`` elements from little-endian chunks.

    Returns ``(elements, bytes_consumed)``.
    """
    out = []
    pos = 0
    n = len(buf)
    frm = int.from_bytes
    while len(out) < count and pos + width <= n:
        v = frm(buf[pos:pos + width], "little")
        pos += width
        if v < bound:
            out.append(v % p)
    return out, pos
