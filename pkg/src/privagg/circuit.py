"""Arithmetic circuits for validity predicates.

A circuit is a topologically ordered gate list over wires: wires
``0..L-1`` are the inputs and gate ``g`` writes wire ``L + g``. A
submission is valid when every *check* wire evaluates to zero. Affine
constraints cost no multiplication gates; each quadratic constraint uses
exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

from privagg import kernels
from privagg.errors import ArityMismatch, ConfigurationError, LengthMismatch
from privagg.field import Field

ADD = kernels.OP_ADD
MULC = kernels.OP_MULC
ADDC = kernels.OP_ADDC
MUL = kernels.OP_MUL

_OP_NAMES = {ADD: "add", MULC: "mulc", ADDC: "addc", MUL: "mul"}


@dataclass(frozen=True)
class Gate:
    op: int
    left: int
    right: int = 0
    const: int = 0


@dataclass(frozen=True, eq=False)
class ValidCircuit:
    input_count: int
    gates: tuple[Gate, ...]
    checks: tuple[int, ...]
    name: str = ""
    mul_gate_index: tuple[int, ...] = dc_field(init=False)

    def __post_init__(self):
        n = self.input_count
        for g, gate in enumerate(self.gates):
            wire = n + g
            if not (0 <= gate.left < wire) or (gate.op in (ADD, MUL) and not 0 <= gate.right < wire):
                raise ConfigurationError(f"gate {g} references a later wire")
        total = n + len(self.gates)
        if any(not 0 <= c < total for c in self.checks):
            raise ConfigurationError("check refers to a missing wire")
        muls = tuple(g for g, gate in enumerate(self.gates) if gate.op == MUL)
        if not muls:
            raise ConfigurationError("circuit needs at least one multiplication gate")
        object.__setattr__(self, "mul_gate_index", muls)
        object.__setattr__(self, "_compiled", {})
        object.__setattr__(self, "_mul_left", [self.gates[g].left for g in muls])
        object.__setattr__(self, "_mul_right", [self.gates[g].right for g in muls])

    @property
    def M(self) -> int:
        return len(self.mul_gate_index)

    @property
    def wire_count(self) -> int:
        return self.input_count + len(self.gates)

    def compiled(self, field: Field):
        """Gate arrays with constants reduced into ``field`` (cached)."""
        p = field.modulus
        arrays = self._compiled.get(p)
        if arrays is None:
            arrays = (
                [g.op for g in self.gates],
                [g.left for g in self.gates],
                [g.right for g in self.gates],
                [g.const % p for g in self.gates],
            )
            self._compiled[p] = arrays
        return arrays

    def mul_depths(self) -> list[int]:
        """Multiplicative depth of every multiplication gate, in gate order."""
        depth = [0] * self.wire_count
        out = []
        n = self.input_count
        for g, gate in enumerate(self.gates):
            if gate.op == MUL:
                d = max(depth[gate.left], depth[gate.right]) + 1
                out.append(d)
            elif gate.op == ADD:
                d = max(depth[gate.left], depth[gate.right])
            else:
                d = depth[gate.left]
            depth[n + g] = d
        return out

    def dump(self) -> str:
        lines = [f"# {self.name} inputs={self.input_count} M={self.M}"]
        n = self.input_count
        for g, gate in enumerate(self.gates):
            op = _OP_NAMES[gate.op]
            if gate.op in (ADD, MUL):
                lines.append(f"w{n + g} = {op} w{gate.left} w{gate.right}")
            else:
                lines.append(f"w{n + g} = {op} w{gate.left} {gate.const}")
        lines.extend(f"assert w{c} == 0" for c in self.checks)
        return "\n".join(lines)


@dataclass
class WireTrace:
    values: list[int]


def eval_circuit(c: ValidCircuit, field: Field, x: Sequence[int]) -> WireTrace:
    if len(x) != c.input_count:
        raise ArityMismatch(f"circuit takes {c.input_count} inputs, got {len(x)}")
    ops, left, right, consts = c.compiled(field)
    return WireTrace(kernels.run_circuit(ops, left, right, consts, list(x),
                                         field.modulus, None, True))


def check_values(c: ValidCircuit, trace: WireTrace) -> list[int]:
    w = trace.values
    return [w[i] for i in c.checks]


def is_valid(c: ValidCircuit, trace: WireTrace) -> bool:
    w = trace.values
    return all(w[i] == 0 for i in c.checks)


def mul_io(c: ValidCircuit, trace: WireTrace) -> tuple[list[int], list[int]]:
    """Left and right inputs of multiplication gates 1..M."""
    w = trace.values
    return [w[i] for i in c._mul_left], [w[i] for i in c._mul_right]


def derive_wire_shares(c: ValidCircuit, field: Field, x_share: Sequence[int],
                       h_points: Sequence[int], *, leader: bool = True,
                       ) -> tuple[list[int], list[int], list[int]]:
    """Replay the affine gates on shares, taking Mul outputs from ``h_points``.

    ``h_points[t-1]`` is this server's share of h(t). Only the ``leader``
    share holder adds AddConst constants, so the shares sum correctly.
    Returns shares of (u_1..u_M), (v_1..v_M) and the check wires.
    """
    if len(x_share) != c.input_count:
        raise ArityMismatch(f"circuit takes {c.input_count} inputs, got {len(x_share)}")
    if len(h_points) != c.M:
        raise LengthMismatch(f"need {c.M} h points, got {len(h_points)}")
    ops, left, right, consts = c.compiled(field)
    w = kernels.run_circuit(ops, left, right, consts, list(x_share), field.modulus,
                            list(h_points), leader)
    return ([w[i] for i in c._mul_left], [w[i] for i in c._mul_right],
            [w[i] for i in c.checks])


def batch_combine(field: Field, outputs: Sequence[int], coeffs: Sequence[int]) -> int:
    """Share of sum_j r_j W_j."""
    if len(outputs) != len(coeffs):
        raise LengthMismatch(f"{len(outputs)} checks vs {len(coeffs)} coefficients")
    return kernels.dot(list(outputs), list(coeffs), field.modulus)


class CircuitBuilder:
    """Incremental construction of a :class:`ValidCircuit`."""

    def __init__(self, input_count: int, name: str = ""):
        if input_count < 1:
            raise ConfigurationError("circuit needs at least one input")
        self.input_count = input_count
        self.name = name
        self.gates: list[Gate] = []
        self.checks: list[int] = []

    def _emit(self, gate: Gate) -> int:
        self.gates.append(gate)
        return self.input_count + len(self.gates) - 1

    def input(self, i: int) -> int:
        if not 0 <= i < self.input_count:
            raise IndexError(i)
        return i

    def add(self, a: int, b: int) -> int:
        return self._emit(Gate(ADD, a, b))

    def mul_const(self, a: int, k: int) -> int:
        return self._emit(Gate(MULC, a, 0, k))

    def add_const(self, a: int, k: int) -> int:
        return self._emit(Gate(ADDC, a, 0, k))

    def mul(self, a: int, b: int) -> int:
        return self._emit(Gate(MUL, a, b))

    def neg(self, a: int) -> int:
        return self.mul_const(a, -1)

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))

    def linear(self, terms: Iterable[tuple[int, int]], const: int = 0) -> int:
        """Wire carrying ``sum coeff * wire + const``."""
        acc = None
        for wire, coeff in terms:
            term = wire if coeff == 1 else self.mul_const(wire, coeff)
            acc = term if acc is None else self.add(acc, term)
        if acc is None:
            acc = self.mul_const(0, 0)
        if const:
            acc = self.add_const(acc, const)
        return acc

    def assert_zero(self, wire: int) -> None:
        self.checks.append(wire)

    def assert_bit(self, wire: int) -> int:
        """One multiplication gate: wire * (wire - 1) == 0."""
        out = self.mul(wire, self.add_const(wire, -1))
        self.checks.append(out)
        return out

    def assert_product(self, a: int, b: int, product: int) -> None:
        self.checks.append(self.sub(self.mul(a, b), product))

    def build(self) -> ValidCircuit:
        if not any(g.op == MUL for g in self.gates):
            zero = self.mul_const(0, 0)
            self.mul(zero, zero)
        return ValidCircuit(self.input_count, tuple(self.gates), tuple(self.checks), self.name)
