"""Multimodal fusion on toy sensor frames.

Frames carry per-cell intensity values on small occupancy grids (camera
4x4, lidar 4x4x2) or a flat radar vector. Sparse self-attention keeps the
dominant amplitudes of an amplitude-encoded frame; geometric alignment
entangles the coordinate registers of two modalities through a projection
map; phase patching completes missing grid cells with distance-decayed
donor values; cross fusion applies a semantics-controlled diagonal phase
plus a Hadamard interference layer and stays exactly reversible through
a replayable handle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import qcore
from .errors import CapacityError, DataError, DomainError, IntegrityError

MODALITIES = ("CAMERA_2D", "LIDAR_3D", "RADAR")

GRID_2D = (4, 4)
GRID_3D = (4, 4, 2)
MAX_FEATURES = 16

HANDLE_TAG = "qv2x-fusion-handle-v1"

_DEFAULT_GRIDS = {"CAMERA_2D": GRID_2D, "LIDAR_3D": GRID_3D, "RADAR": ()}


def drop_depth(coord):
    """Default 3D->2D projection: forget the layer index."""
    return (coord[0], coord[1])


@dataclass(frozen=True, eq=False)
class ModalityFrame:
    """One sensor frame: a value per occupied cell, or a flat radar vector.

    features[i] is the intensity at coords[i] for gridded modalities;
    radar frames carry no grid and leave coords empty.
    """

    modality: str
    features: np.ndarray
    coords: tuple[tuple[int, ...], ...] = ()
    grid: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DomainError(f"unknown modality {self.modality!r}")
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 1 or feats.size < 1:
            raise DomainError("features must be a nonempty 1-D vector")
        m = feats.size
        if m & (m - 1) or m > MAX_FEATURES:
            raise DomainError(
                f"feature count {m} must be a power of two <= {MAX_FEATURES}"
            )
        if feats.min() < 0.0 or feats.max() > 1.0:
            raise DomainError("features must lie in [0, 1]")
        grid = self.grid if self.grid is not None else _DEFAULT_GRIDS[self.modality]
        grid = tuple(int(g) for g in grid)
        object.__setattr__(self, "grid", grid)
        coords = tuple(tuple(int(c) for c in cell) for cell in self.coords)
        object.__setattr__(self, "coords", coords)
        if self.modality == "RADAR":
            if grid != () or coords != ():
                raise DomainError("radar frames carry no grid or coordinates")
            return
        want_axes = 2 if self.modality == "CAMERA_2D" else 3
        if len(grid) != want_axes:
            raise DomainError(f"{self.modality} grid needs {want_axes} axes")
        for g in grid:
            if g < 2 or g & (g - 1):
                raise DomainError(f"grid axis {g} must be a power of two >= 2")
        if len(coords) != m:
            raise DomainError(
                f"{len(coords)} coordinates for {m} features; one cell each"
            )
        if len(set(coords)) != len(coords):
            raise DomainError("duplicate occupied cells")
        for cell in coords:
            if len(cell) != want_axes or any(
                not 0 <= c < g for c, g in zip(cell, grid)
            ):
                raise DomainError(f"cell {cell} outside grid {grid}")


@dataclass(frozen=True, eq=False)
class AlignedPair:
    """Joint coordinate state of two modalities plus the overlap mask."""

    joint_state: qcore.StateVector
    overlap_mask: np.ndarray
    projection: object

    def __post_init__(self):
        mask = np.asarray(self.overlap_mask, dtype=bool)
        object.__setattr__(self, "overlap_mask", mask)
        if mask.ndim != 2:
            raise DomainError("overlap mask must be a 2-D cell grid")


@dataclass(frozen=True, eq=False)
class PatchedGrids:
    """Fully populated cell grids after donor filling and integration."""

    camera_grid: np.ndarray
    lidar_grid: np.ndarray
    fused_grid: np.ndarray


@dataclass(frozen=True)
class FusionHandle:
    """Replayable descriptor of one fusion unitary and its exact inverse."""

    descriptor: tuple
    source_dims: int

    def __post_init__(self):
        d = self.source_dims
        if d < 1 or d & (d - 1):
            raise DomainError(f"source_dims {d} must be a power of two")
        steps = tuple(
            {k: tuple(v) if isinstance(v, list) else v for k, v in step.items()}
            if isinstance(step, dict)
            else step
            for step in self.descriptor
        )
        object.__setattr__(self, "descriptor", steps)
        kinds = [s.get("kind") if isinstance(s, dict) else None for s in steps]
        if kinds != ["PHASE_DIAG", "H_LAYER"]:
            raise DomainError(f"descriptor steps {kinds} not a fusion unitary")
        phases = np.asarray(steps[0].get("phases", ()), dtype=np.float64)
        if phases.shape != (d,):
            raise DomainError(f"{phases.size} phases for dimension {d}")
        if phases.size and (phases.min() < 0.0 or phases.max() > 1.0):
            raise DomainError("phases must lie in [0, 1]")


def _n_qubits(dim: int) -> int:
    return int(dim - 1).bit_length()


def _grid_qubits(grid) -> int:
    return sum(int(g - 1).bit_length() for g in grid)


def _cell_index(cell, grid) -> int:
    # row-major; power-of-two axes make this bit concatenation
    idx = 0
    for c, g in zip(cell, grid):
        idx = idx * g + c
    return idx


def self_attend(frame: ModalityFrame, k_keep: int) -> qcore.StateVector:
    """Amplitude-encode a frame and keep its k_keep dominant amplitudes.

    Ties in probability break toward the lower basis index; the survivors
    are renormalized so the state stays unit length.
    """
    m = frame.features.size
    if not 1 <= k_keep <= m:
        raise DomainError(f"k_keep {k_keep} outside [1, {m}]")
    norm = float(np.linalg.norm(frame.features))
    if norm == 0.0:
        raise DomainError("all-zero feature vector cannot be encoded")
    amps = frame.features / norm
    order = np.argsort(-(amps**2), kind="stable")
    kept = np.zeros(m)
    kept[order[:k_keep]] = amps[order[:k_keep]]
    kept /= np.linalg.norm(kept)
    return qcore.StateVector(_n_qubits(m), kept.astype(np.complex128))


def entangle_align(
    frame2d: ModalityFrame, frame3d: ModalityFrame, projection=drop_depth
) -> AlignedPair:
    """Entangle the coordinate registers of a 2D and a 3D frame.

    The joint register puts the 2D cell qubits ahead of the 3D voxel
    qubits. The state is a uniform superposition over occupied voxels
    with the 2D side slaved to the projected voxel, so conditioning on
    either register fixes the other. The mask marks cells occupied by
    both modalities.
    """
    if frame2d.modality != "CAMERA_2D" or frame3d.modality != "LIDAR_3D":
        raise DomainError("alignment takes a camera frame and a lidar frame")
    if not frame2d.coords or not frame3d.coords:
        raise DomainError("occupancy empty on one side; nothing to align")
    proj = {}
    for r in range(frame3d.grid[0]):
        for c in range(frame3d.grid[1]):
            for l in range(frame3d.grid[2]):
                cell = tuple(int(x) for x in projection((r, c, l)))
                if len(cell) != 2 or any(
                    not 0 <= x < g for x, g in zip(cell, frame2d.grid)
                ):
                    raise DomainError(
                        f"projection of voxel {(r, c, l)} lands outside "
                        f"grid {frame2d.grid}"
                    )
                proj[(r, c, l)] = cell
    q2, q3 = _grid_qubits(frame2d.grid), _grid_qubits(frame3d.grid)
    if q2 + q3 > qcore.MAX_QUBITS:
        raise CapacityError(
            f"joint register needs {q2 + q3} qubits, cap {qcore.MAX_QUBITS}"
        )
    dim3 = 1 << q3
    amps = np.zeros(1 << (q2 + q3), dtype=np.complex128)
    for voxel in frame3d.coords:
        i2 = _cell_index(proj[voxel], frame2d.grid)
        amps[i2 * dim3 + _cell_index(voxel, frame3d.grid)] = 1.0
    amps /= np.linalg.norm(amps)
    mask = np.zeros(frame2d.grid, dtype=bool)
    for voxel in frame3d.coords:
        mask[proj[voxel]] = True
    occupied2 = np.zeros(frame2d.grid, dtype=bool)
    for cell in frame2d.coords:
        occupied2[cell] = True
    return AlignedPair(
        joint_state=qcore.StateVector(q2 + q3, amps),
        overlap_mask=mask & occupied2,
        projection=projection,
    )


def _donor_fill(values: np.ndarray, occupied: np.ndarray) -> np.ndarray:
    """Fill unoccupied cells from the nearest occupied donor with cos decay.

    Chebyshev distance; ties break toward the lower row-major donor.
    Adjacent donors (distance 1) copy unchanged, the farthest possible
    donor contributes zero.
    """
    out = values.copy()
    donors = np.argwhere(occupied)
    d_max = max(values.shape) - 1
    for cell in np.argwhere(~occupied):
        dist = np.max(np.abs(donors - cell), axis=1)
        j = int(np.argmin(dist))  # argwhere is row-major, first min wins
        d = int(dist[j])
        decay = 1.0 if d <= 1 else np.cos(0.5 * np.pi * (d - 1) / (d_max - 1))
        out[tuple(cell)] = values[tuple(donors[j])] * decay
    return out


def phase_patch(
    pair: AlignedPair, frame2d: ModalityFrame, frame3d: ModalityFrame
) -> PatchedGrids:
    """Complete both modality grids and integrate them cell by cell.

    Voxel values are projected onto the 2D grid (mean over a shared
    cell), each modality's missing cells are donor-filled, and the
    fused grid averages the two completed grids, so overlap cells carry
    the plain cross-modal mean.
    """
    if frame2d.modality != "CAMERA_2D" or frame3d.modality != "LIDAR_3D":
        raise DomainError("patching takes a camera frame and a lidar frame")
    if pair.overlap_mask.shape != frame2d.grid:
        raise DomainError(
            f"mask shape {pair.overlap_mask.shape} != grid {frame2d.grid}"
        )
    if not frame2d.coords or not frame3d.coords:
        raise DomainError("occupancy empty on one side; no donors available")
    val2 = np.zeros(frame2d.grid)
    occ2 = np.zeros(frame2d.grid, dtype=bool)
    for cell, v in zip(frame2d.coords, frame2d.features):
        val2[cell] = v
        occ2[cell] = True
    acc = np.zeros(frame2d.grid)
    cnt = np.zeros(frame2d.grid)
    for voxel, v in zip(frame3d.coords, frame3d.features):
        cell = tuple(int(x) for x in pair.projection(voxel))
        acc[cell] += v
        cnt[cell] += 1.0
    occ3 = cnt > 0
    val3 = np.divide(acc, cnt, out=np.zeros_like(acc), where=occ3)
    if not np.array_equal(pair.overlap_mask, occ2 & occ3):
        raise DomainError("pair does not match the frames it is patched with")
    camera = _donor_fill(val2, occ2)
    lidar = _donor_fill(val3, occ3)
    return PatchedGrids(camera, lidar, 0.5 * (camera + lidar))


def cross_fuse(
    state: qcore.StateVector, semantics: np.ndarray
) -> tuple[qcore.StateVector, FusionHandle]:
    """Fuse semantics into a state by diagonal phases plus interference.

    Each basis amplitude picks up exp(i pi b_k) from the semantics
    vector, then a Hadamard on every qubit mixes the phased amplitudes.
    The returned handle replays or exactly inverts the unitary.
    """
    b = np.asarray(semantics, dtype=np.float64)
    dim = state.amplitudes.size
    if b.shape != (dim,):
        raise DomainError(f"semantics length {b.size} != state dimension {dim}")
    if b.size and (b.min() < 0.0 or b.max() > 1.0):
        raise DomainError("semantics must be normalized into [0, 1]")
    phased = np.exp(1j * np.pi * b) * state.amplitudes
    fused = _h_layer(qcore.StateVector(state.n_qubits, phased))
    handle = FusionHandle(
        descriptor=(
            {"kind": "PHASE_DIAG", "phases": tuple(b.tolist())},
            {"kind": "H_LAYER", "wires": tuple(range(state.n_qubits))},
        ),
        source_dims=dim,
    )
    return fused, handle


def _h_layer(state: qcore.StateVector) -> qcore.StateVector:
    if state.n_qubits == 0:
        return state
    layer = qcore.Circuit(
        state.n_qubits,
        tuple(qcore.GateOp("H", (w,)) for w in range(state.n_qubits)),
    )
    return qcore.apply_circuit(state, layer)


def unfuse(fused: qcore.StateVector, handle: FusionHandle) -> qcore.StateVector:
    """Invert a recorded fusion: Hadamard layer back, conjugate phases."""
    if fused.amplitudes.size != handle.source_dims:
        raise DomainError(
            f"state dimension {fused.amplitudes.size} != handle "
            f"source_dims {handle.source_dims}"
        )
    wires = handle.descriptor[1].get("wires", ())
    if tuple(wires) != tuple(range(fused.n_qubits)):
        raise IntegrityError(f"handle wires {wires} do not span the register")
    b = np.asarray(handle.descriptor[0]["phases"], dtype=np.float64)
    undone = _h_layer(fused)  # Hadamard is self-inverse
    amps = np.exp(-1j * np.pi * b) * undone.amplitudes
    return qcore.StateVector(fused.n_qubits, amps)


def save_handle(handle: FusionHandle, path) -> None:
    """Write a versioned JSON handle, descriptor in checkpoint op format."""
    record = {
        "format": HANDLE_TAG,
        "source_dims": handle.source_dims,
        "descriptor": [
            {k: list(v) if isinstance(v, tuple) else v for k, v in step.items()}
            for step in handle.descriptor
        ],
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_handle(path) -> FusionHandle:
    """Read a handle; wrong tag or malformed descriptor fails validation."""
    with open(path) as fh:
        record = json.load(fh)
    if record.get("format") != HANDLE_TAG:
        raise IntegrityError(
            f"handle format {record.get('format')!r} != {HANDLE_TAG!r}"
        )
    try:
        return FusionHandle(
            descriptor=tuple(record["descriptor"]),
            source_dims=int(record["source_dims"]),
        )
    except (KeyError, TypeError, AttributeError, DomainError) as exc:
        raise IntegrityError(f"corrupt handle: {exc}") from exc


def fused_probabilities(fused: qcore.StateVector) -> np.ndarray:
    """Measurement distribution of a fused state for downstream decisions."""
    return qcore.probabilities(fused.amplitudes)


def frames_to_jsonl(frames, path) -> None:
    """Write frames as JSON lines; grid recorded only when non-default."""
    with open(path, "w") as fh:
        for frame in frames:
            record = {
                "modality": frame.modality,
                "coords": [list(c) for c in frame.coords],
                "features": frame.features.tolist(),
            }
            if frame.grid != _DEFAULT_GRIDS[frame.modality]:
                record["grid"] = list(frame.grid)
            fh.write(json.dumps(record) + "\n")


def frames_from_jsonl(path) -> list[ModalityFrame]:
    """Read frames back; any malformed line fails with its line number."""
    frames = []
    allowed = {"modality", "coords", "features", "grid"}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                extra = set(record) - allowed
                if extra:
                    raise DomainError(f"unknown fields {sorted(extra)}")
                frames.append(
                    ModalityFrame(
                        modality=record["modality"],
                        features=np.asarray(record["features"], dtype=np.float64),
                        coords=tuple(tuple(c) for c in record["coords"]),
                        grid=tuple(record["grid"]) if "grid" in record else None,
                    )
                )
            except (KeyError, TypeError, ValueError, DomainError) as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
    return frames
