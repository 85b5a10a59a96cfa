"""Dense statevector engine with parameter-shift gradients.

States are complex amplitude vectors over n qubits in big-endian order:
basis index i carries qubit w in bit (n - 1 - w), so |q0 q1 ... q_{n-1}>
reads left to right. All kernels accept arbitrary leading batch axes and
broadcast per-batch rotation angles, which is what makes shift-rule
gradient evaluation cheap: the 2P shifted parameter vectors run as one
vectorized pass instead of 2P python loops.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, DomainError

MAX_QUBITS = 12

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("H", "CNOT")

NORM_ATOL = 1e-10


@dataclass(frozen=True)
class GateOp:
    """One gate in a circuit.

    Rotation gates carry either a parameter slot (resolved at apply time)
    or a fixed angle, never both. H and CNOT carry neither.
    """

    kind: str
    wires: tuple[int, ...]
    param_slot: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise DomainError(f"unknown gate kind {self.kind!r}")
        expect_wires = 2 if self.kind == "CNOT" else 1
        if len(self.wires) != expect_wires:
            raise DomainError(
                f"{self.kind} takes {expect_wires} wire(s), got {self.wires}"
            )
        if self.kind == "CNOT" and self.wires[0] == self.wires[1]:
            raise DomainError("CNOT control and target must differ")
        if self.kind in ROTATIONS:
            if (self.param_slot is None) == (self.angle is None):
                raise DomainError(
                    f"{self.kind} needs exactly one of param_slot or angle"
                )
        elif self.param_slot is not None or self.angle is not None:
            raise DomainError(f"{self.kind} takes no parameter")


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list over a fixed-width register.

    n_params counts the distinct parameter slots; every slotted gate must
    reference a slot below it. A slot may feed several gates.
    """

    n_qubits: int
    ops: tuple[GateOp, ...]
    n_params: int = 0

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise CapacityError(
                f"n_qubits={self.n_qubits} outside [1, {MAX_QUBITS}]"
            )
        for op in self.ops:
            if any(not 0 <= w < self.n_qubits for w in op.wires):
                raise DomainError(f"op {op} references wire outside register")
            if op.param_slot is not None and not (
                0 <= op.param_slot < self.n_params
            ):
                raise DomainError(
                    f"param_slot {op.param_slot} outside [0, {self.n_params})"
                )


@dataclass(frozen=True)
class StateVector:
    """Normalized amplitude vector over n_qubits."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        object.__setattr__(self, "amplitudes", amps)
        if amps.shape != (1 << self.n_qubits,):
            raise DomainError(
                f"amplitude length {amps.shape} does not match "
                f"{self.n_qubits} qubits"
            )
        norm = float(np.sum(amps.real**2 + amps.imag**2))
        if abs(norm - 1.0) > NORM_ATOL:
            raise DomainError(f"state norm {norm} deviates from 1 beyond {NORM_ATOL}")


@dataclass(frozen=True)
class Observable:
    """Tensor product of Pauli-Z factors on the listed wires."""

    wires: tuple[int, ...]

    def __post_init__(self):
        if len(self.wires) == 0:
            raise DomainError("observable needs at least one wire")
        if len(set(self.wires)) != len(self.wires):
            raise DomainError(f"duplicate wires in observable {self.wires}")


def init_state(n_qubits: int) -> StateVector:
    """Return |0...0> on n_qubits; capped at MAX_QUBITS."""
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits={n_qubits} outside [1, {MAX_QUBITS}]")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


@lru_cache(maxsize=None)
def _cnot_perm(n: int, ctrl: int, tgt: int) -> np.ndarray:
    # new[i] = old[i ^ tgt_bit] when ctrl bit set; the XOR map is its own inverse.
    idx = np.arange(1 << n)
    ctrl_bit = (idx >> (n - 1 - ctrl)) & 1
    return idx ^ (ctrl_bit << (n - 1 - tgt))


@lru_cache(maxsize=None)
def _z_signs(n: int, wires: tuple[int, ...]) -> np.ndarray:
    idx = np.arange(1 << n)
    signs = np.ones(1 << n)
    for w in wires:
        signs *= 1.0 - 2.0 * ((idx >> (n - 1 - w)) & 1)
    return signs


def _apply_1q(amps, n, wire, a, b, c, d):
    """Apply [[a, b], [c, d]] on one wire; entries may carry leading batch axes."""
    lead = amps.shape[:-1]
    pre, post = 1 << wire, 1 << (n - 1 - wire)
    x = amps.reshape(*lead, pre, 2, post)
    x0, x1 = x[..., 0, :], x[..., 1, :]
    a, b, c, d = (
        v[..., None, None] if np.ndim(v) else v for v in (a, b, c, d)
    )
    out = np.empty_like(x)
    out[..., 0, :] = a * x0 + b * x1
    out[..., 1, :] = c * x0 + d * x1
    return out.reshape(*lead, pre * 2 * post)


def _op_matrix(op: GateOp, params):
    """2x2 coefficients (a, b, c, d) for a single-qubit op.

    Slotted rotations pick their angle column out of params, so the
    coefficients inherit any leading batch axes of the parameter array.
    """
    if op.kind == "H":
        inv = 1.0 / np.sqrt(2.0)
        return inv + 0j, inv + 0j, inv + 0j, -inv + 0j
    theta = params[..., op.param_slot] if op.param_slot is not None else op.angle
    half = 0.5 * theta
    cos, sin = np.cos(half), np.sin(half)
    if op.kind == "RX":
        return cos + 0j, -1j * sin, -1j * sin, cos + 0j
    if op.kind == "RY":
        return cos + 0j, -sin + 0j, sin + 0j, cos + 0j
    return cos - 1j * sin, 0j, 0j, cos + 1j * sin  # RZ


def apply_circuit_amps(
    amps: np.ndarray, circuit: Circuit, params: np.ndarray | None = None
) -> np.ndarray:
    """Run a circuit over raw amplitudes with arbitrary leading batch axes.

    Args:
        amps: complex array (..., 2**n_qubits).
        params: parameter vector (n_params,) or batch (..., n_params) whose
            leading axes broadcast against those of amps. None only for
            parameter-free circuits.

    Returns:
        New amplitude array; input is never mutated.
    """
    n = circuit.n_qubits
    dim = 1 << n
    amps = np.asarray(amps, dtype=np.complex128)
    if amps.shape[-1] != dim:
        raise DomainError(
            f"amplitude axis {amps.shape[-1]} does not match {n} qubits"
        )
    if circuit.n_params:
        if params is None:
            raise DomainError("circuit has parameter slots but params is None")
        params = np.asarray(params, dtype=np.float64)
        if params.shape[-1] != circuit.n_params:
            raise DomainError(
                f"params length {params.shape[-1]} != n_params {circuit.n_params}"
            )
        lead = np.broadcast_shapes(amps.shape[:-1], params.shape[:-1])
    else:
        lead = amps.shape[:-1]
    amps = np.array(np.broadcast_to(amps, lead + (dim,)))

    # Peephole pass: fold runs of consecutive CNOTs into one index gather
    # and runs of same-wire single-qubit gates into one 2x2 product. Gate
    # order within a run composes right-to-left, matching sequential apply.
    ops = circuit.ops
    i = 0
    while i < len(ops):
        op = ops[i]
        if op.kind == "CNOT":
            perm = _cnot_perm(n, op.wires[0], op.wires[1])
            i += 1
            while i < len(ops) and ops[i].kind == "CNOT":
                perm = perm[_cnot_perm(n, ops[i].wires[0], ops[i].wires[1])]
                i += 1
            amps = amps[..., perm]
            continue
        w = op.wires[0]
        a, b, c, d = _op_matrix(op, params)
        i += 1
        while i < len(ops) and ops[i].kind != "CNOT" and ops[i].wires[0] == w:
            a2, b2, c2, d2 = _op_matrix(ops[i], params)
            a, b, c, d = (
                a2 * a + b2 * c,
                a2 * b + b2 * d,
                c2 * a + d2 * c,
                c2 * b + d2 * d,
            )
            i += 1
        amps = _apply_1q(amps, n, w, a, b, c, d)
    return amps


def apply_circuit(
    state: StateVector, circuit: Circuit, params: np.ndarray | None = None
) -> StateVector:
    """Apply a circuit to a single state, returning a new normalized state."""
    if state.n_qubits != circuit.n_qubits:
        raise DomainError(
            f"state width {state.n_qubits} != circuit width {circuit.n_qubits}"
        )
    if circuit.n_params and params is not None:
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1:
            raise DomainError("apply_circuit takes a single parameter vector")
    amps = apply_circuit_amps(state.amplitudes, circuit, params)
    return StateVector(state.n_qubits, amps)


def probabilities(amps: np.ndarray) -> np.ndarray:
    """|amplitude|^2 along the last axis."""
    amps = np.asarray(amps)
    return amps.real**2 + amps.imag**2


def expect_z_amps(amps: np.ndarray, n_qubits: int, wires: tuple[int, ...]) -> np.ndarray:
    """Expectation of the Z tensor product on wires, batched over leading axes."""
    signs = _z_signs(n_qubits, tuple(wires))
    return probabilities(amps) @ signs


def expect(state: StateVector, obs: Observable) -> float:
    """<state| Z_w1 Z_w2 ... |state>, always in [-1, 1]."""
    if any(w >= state.n_qubits for w in obs.wires):
        raise DomainError(f"observable wires {obs.wires} exceed register")
    return float(expect_z_amps(state.amplitudes, state.n_qubits, obs.wires))


def angle_encode(features: np.ndarray) -> Circuit:
    """One fixed RY(pi * x_w) per wire, mapping features in [0, 1] to angles."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 1 or feats.size == 0:
        raise DomainError("features must be a non-empty 1-D vector")
    if feats.size > MAX_QUBITS:
        raise CapacityError(f"{feats.size} features exceed {MAX_QUBITS} wires")
    if np.any(feats < 0.0) or np.any(feats > 1.0):
        raise DomainError("features must lie in [0, 1]")
    ops = tuple(
        GateOp("RY", (w,), angle=float(np.pi * feats[w])) for w in range(feats.size)
    )
    return Circuit(feats.size, ops, 0)


def encoded_product_amps(angle_rows: np.ndarray) -> np.ndarray:
    """Product states prod_w RY(a_w)|0> for a batch of angle rows.

    Equivalent to running angle_encode on |0...0> row by row, but built
    directly from per-wire (cos a/2, sin a/2) factors.
    """
    rows = np.atleast_2d(np.asarray(angle_rows, dtype=np.float64))
    n = rows.shape[1]
    if n > MAX_QUBITS:
        raise CapacityError(f"{n} wires exceed {MAX_QUBITS}")
    amps = np.ones((rows.shape[0], 1), dtype=np.complex128)
    for w in range(n):
        half = 0.5 * rows[:, w]
        pair = np.stack([np.cos(half), np.sin(half)], axis=1).astype(np.complex128)
        amps = (amps[:, :, None] * pair[:, None, :]).reshape(rows.shape[0], -1)
    if np.asarray(angle_rows).ndim == 1:
        return amps[0]
    return amps


def param_shift_grad(
    circuit: Circuit,
    params: np.ndarray,
    input_state: StateVector,
    obs: Observable,
) -> np.ndarray:
    """Exact gradient of <obs> by the shift rule.

    For rotation generators P/2 the derivative is
    (f(theta + pi/2 e_j) - f(theta - pi/2 e_j)) / 2; all 2P shifted
    evaluations run as one batched pass.
    """
    params = np.asarray(params, dtype=np.float64)
    p = circuit.n_params
    if params.shape != (p,):
        raise DomainError(f"params shape {params.shape} != ({p},)")
    if p == 0:
        return np.zeros(0)
    shifts = np.tile(params, (2 * p, 1))
    rows = np.arange(p)
    shifts[rows, rows] += 0.5 * np.pi
    shifts[p + rows, rows] -= 0.5 * np.pi
    amps = apply_circuit_amps(input_state.amplitudes, circuit, shifts)
    vals = expect_z_amps(amps, circuit.n_qubits, obs.wires)
    return 0.5 * (vals[:p] - vals[p:])


def state_fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2, clipped into [0, 1] against roundoff."""
    if a.n_qubits != b.n_qubits:
        raise DomainError(
            f"state widths differ: {a.n_qubits} vs {b.n_qubits}"
        )
    overlap = np.vdot(a.amplitudes, b.amplitudes)
    return float(min(1.0, (overlap.real**2 + overlap.imag**2)))


def inverse_circuit(circuit: Circuit) -> Circuit:
    """Reverse the op order and negate fixed rotation angles.

    Slotted rotations keep their slot; run the result with negated
    parameters to realize the exact inverse. H and CNOT are self-inverse.
    """
    inv_ops = []
    for op in reversed(circuit.ops):
        if op.kind in ROTATIONS and op.angle is not None:
            inv_ops.append(GateOp(op.kind, op.wires, angle=-op.angle))
        else:
            inv_ops.append(op)
    return Circuit(circuit.n_qubits, tuple(inv_ops), circuit.n_params)


def layered_ansatz(n_qubits: int, n_layers: int) -> Circuit:
    """Hardware-style block: per layer RY, RZ on every wire then a CNOT ring.

    Parameter slots are laid out layer-major, then wire, then (RY, RZ), so
    the circuit has 2 * n_qubits * n_layers slots. The ring couples wire w
    to w+1 and closes n-1 -> 0 when the register has at least two wires.
    """
    if n_layers < 1:
        raise DomainError(f"n_layers={n_layers} must be >= 1")
    ops = []
    slot = 0
    for _ in range(n_layers):
        for w in range(n_qubits):
            ops.append(GateOp("RY", (w,), param_slot=slot))
            ops.append(GateOp("RZ", (w,), param_slot=slot + 1))
            slot += 2
        if n_qubits > 1:
            for w in range(n_qubits):
                ops.append(GateOp("CNOT", (w, (w + 1) % n_qubits)))
    return Circuit(n_qubits, tuple(ops), slot)
