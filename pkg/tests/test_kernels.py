from __future__ import annotations

import os
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from privagg import _pykernels as py
from privagg.field import F31, F101, GOLDILOCKS

ck = pytest.importorskip("privagg._ckernels", reason="compiled kernels not built")

MODULI = [F101.modulus, F31.modulus, GOLDILOCKS.modulus]


@st.composite
def vectors(draw, count=2, min_size=0, max_size=40):
    p = draw(st.sampled_from(MODULI))
    n = draw(st.integers(min_size, max_size))
    vecs = [draw(st.lists(st.integers(0, p - 1), min_size=n, max_size=n)) for _ in range(count)]
    return p, vecs


@given(vectors())
def test_vector_ops_agree(pv):
    p, (a, b) = pv
    assert ck.dot(a, b, p) == py.dot(a, b, p)
    assert ck.vec_add(a, b, p) == py.vec_add(a, b, p)
    assert ck.vec_sub(a, b, p) == py.vec_sub(a, b, p)
    k = b[0] if b else 7
    assert ck.vec_scale(a, k, p) == py.vec_scale(a, k, p)


@given(vectors(max_size=24), st.integers(0, 1 << 70))
def test_polynomial_ops_agree(pv, x):
    p, (a, b) = pv
    assert ck.poly_mul(a, b, p) == py.poly_mul(a, b, p)
    assert ck.poly_eval(a, x % p, p) == py.poly_eval(a, x % p, p)


@given(st.sampled_from([F101, F31, GOLDILOCKS]), st.binary(max_size=300), st.integers(0, 50))
def test_bytes_to_field_agree(field, buf, count):
    args = (buf, field.width, field.modulus, field.sample_bound, count)
    assert ck.bytes_to_field(*args) == py.bytes_to_field(*args)


@given(vectors(count=1, min_size=1, max_size=12))
def test_extend_consecutive_agree(pv):
    p, (z,) = pv
    m = len(z) - 1
    inv = [0] + [pow(d, p - 2, p) for d in range(1, 2 * m + 1)]
    ells = [(i * 31 + 5) % p for i in range(m)]
    assert ck.extend_consecutive(z, inv, ells, p) == py.extend_consecutive(z, inv, ells, p)


@given(st.data())
def test_run_circuit_agree(data):
    p = data.draw(st.sampled_from(MODULI))
    n_in = data.draw(st.integers(1, 5))
    ops, left, right, consts = [], [], [], []
    for g in range(data.draw(st.integers(1, 12))):
        wires = n_in + g
        ops.append(data.draw(st.sampled_from([py.OP_ADD, py.OP_MULC, py.OP_ADDC, py.OP_MUL])))
        left.append(data.draw(st.integers(0, wires - 1)))
        right.append(data.draw(st.integers(0, wires - 1)))
        consts.append(data.draw(st.integers(0, p - 1)))
    inputs = data.draw(st.lists(st.integers(0, p - 1), min_size=n_in, max_size=n_in))
    const_on = data.draw(st.sampled_from([0, 1]))
    n_mul = ops.count(py.OP_MUL)
    outs = data.draw(st.none() | st.lists(st.integers(0, p - 1), min_size=n_mul, max_size=n_mul))
    args = (ops, left, right, consts, inputs, p, outs, const_on)
    assert ck.run_circuit(*args) == py.run_circuit(*args)


def test_pure_switch():
    code = "from privagg import kernels; print(kernels.BACKEND)"
    for val, want in (("1", "python"), ("0", "cython")):
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env=dict(os.environ, PRIVAGG_PURE=val), check=True)
        assert out.stdout.strip() == want
