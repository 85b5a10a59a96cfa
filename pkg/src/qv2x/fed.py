"""Federated training over low-rank factor payloads with additive-mask uploads.

Each weight matrix of the codec travels as a truncated SVD triplet whose
rank adapts to an energy threshold. Clients train only the dominant half
of the triplets, upload flattened factors under pairwise antisymmetric
masks, and the cloud averages the reconstructed matrices and re-compresses.
A reverse correction then blends the new global model back into each
client's local one.

The masking here is bookkeeping-level, not an isolation boundary: every
`MaskedUpdate` carries its plaintext payload next to the mask so that
cancellation can be checked and the reconstruction-space average computed
in process. A wire deployment would transmit `upload` alone; summing
those recovers the roster total because masks cancel pairwise.
"""

import csv
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import codec
from .errors import DataError, DomainError, IntegrityError, ProtocolError

# config-provisioned shared secret for mask derivation; deployments override
DEFAULT_MASK_SECRET = 123456789

# mask sums cancel exactly in theory; this absorbs summation rounding
MASK_CANCEL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LayerFactors:
    """One weight matrix as u * diag(s) @ v.T with r retained directions.

    Fresh output of decompose is canonical: orthonormal columns and a
    non-increasing s. Local training perturbs the core triplets, so
    instances are only structurally validated here; canonical form is
    restored at the next re-decomposition.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("u", "s", "v"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        if self.u.ndim != 2 or self.v.ndim != 2 or self.s.ndim != 1:
            raise DomainError("factors need 2-D u, 1-D s, 2-D v")
        r = self.s.size
        if self.u.shape[1] != r or self.v.shape[1] != r:
            raise DomainError(
                f"rank mismatch: u has {self.u.shape[1]} columns, "
                f"s has {r}, v has {self.v.shape[1]}"
            )
        if r > min(self.u.shape[0], self.v.shape[0]):
            raise DomainError(f"rank {r} exceeds min matrix dimension")
        for name in ("u", "s", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"non-finite entries in {name}")
        if self.s.size and self.s.min() < 0.0:
            raise DomainError("singular values must be >= 0")

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def r(self) -> int:
        return self.s.size


@dataclass(frozen=True, eq=False)
class LowRankModel:
    """Ordered layer factors plus round/client bookkeeping."""

    layers: tuple
    round_index: int = 0
    client_id: int = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise DomainError("model needs at least one layer")
        for lay in self.layers:
            if not isinstance(lay, LayerFactors):
                raise DomainError("layers must be LayerFactors")


@dataclass(frozen=True, eq=False)
class DualSplit:
    """Per-layer partition into trainable core and frozen auxiliary triplets."""

    core: tuple
    auxiliary: tuple
    round_index: int = 0
    client_id: int = None

    def __post_init__(self):
        object.__setattr__(self, "core", tuple(self.core))
        object.__setattr__(self, "auxiliary", tuple(self.auxiliary))
        if len(self.core) != len(self.auxiliary):
            raise DomainError("core and auxiliary layer counts differ")


@dataclass(frozen=True, eq=False)
class MaskedUpdate:
    """Flat factor payload, its mask, and the public framing metadata."""

    client_id: int
    factors: np.ndarray
    mask: np.ndarray
    layout: tuple
    round_salt: int

    def __post_init__(self):
        if self.factors.shape != self.mask.shape or self.factors.ndim != 1:
            raise DomainError("factors and mask must be equal-length vectors")

    @property
    def upload(self) -> np.ndarray:
        """The vector a client would actually transmit."""
        return self.factors + self.mask


def decompose(w: np.ndarray, tau: float = 1.0, r_max: int = None) -> LayerFactors:
    """Truncated SVD keeping the smallest rank that holds tau of the energy.

    r = min(r_max, smallest k with sum of the top k squared singular
    values >= tau times the total). Ties in s keep their original order.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise DomainError(f"weight matrix must be 2-D and nonempty, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DomainError("weight matrix has non-finite entries")
    if not 0.0 < tau <= 1.0:
        raise DomainError(f"tau={tau} must be in (0, 1]")
    if r_max is not None and r_max < 1:
        raise DomainError(f"r_max={r_max} must be >= 1")
    u, s, vt = np.linalg.svd(w, full_matrices=False)
    cum = np.cumsum(s**2)
    r = int(np.searchsorted(cum, tau * cum[-1], side="left")) + 1
    if r_max is not None:
        r = min(r, r_max)
    return LayerFactors(u[:, :r].copy(), s[:r].copy(), vt[:r].T.copy())


def reconstruct(f: LayerFactors) -> np.ndarray:
    """Dense matrix u * diag(s) @ v.T for one layer."""
    return (f.u * f.s) @ f.v.T


def _layer_caps(r_max, n_layers: int):
    """Normalize a scalar or per-layer rank cap to one cap per layer."""
    if r_max is None or np.isscalar(r_max):
        return [r_max] * n_layers
    caps = tuple(r_max)
    if len(caps) != n_layers:
        raise DomainError(
            f"{len(caps)} rank caps for {n_layers} layers"
        )
    return list(caps)


def model_param_count(model: LowRankModel) -> int:
    """Factor entries a client uploads: sum of r * (m + n + 1)."""
    return sum(f.r * (f.m + f.n + 1) for f in model.layers)


def dense_param_count(model: LowRankModel) -> int:
    return sum(f.m * f.n for f in model.layers)


def compression_ratio(model: LowRankModel) -> float:
    """Uploaded factor count as a fraction of dense (< 1 when compressed)."""
    return model_param_count(model) / dense_param_count(model)


# ---------------------------------------------------------------------------
# dual split


def split_dual(model: LowRankModel) -> DualSplit:
    """Top ceil(r/2) triplets per layer become the trainable core."""
    core, aux = [], []
    for f in model.layers:
        if f.r < 1:
            raise DomainError("split needs every layer rank >= 1")
        k = (f.r + 1) // 2
        core.append(LayerFactors(f.u[:, :k], f.s[:k], f.v[:, :k]))
        aux.append(LayerFactors(f.u[:, k:], f.s[k:], f.v[:, k:]))
    return DualSplit(
        tuple(core), tuple(aux), model.round_index, model.client_id
    )


def recombine(split: DualSplit) -> LowRankModel:
    """Concatenate core and auxiliary triplets back into full factors."""
    layers = []
    for c, a in zip(split.core, split.auxiliary):
        layers.append(
            LayerFactors(
                np.concatenate([c.u, a.u], axis=1),
                np.concatenate([c.s, a.s]),
                np.concatenate([c.v, a.v], axis=1),
            )
        )
    return LowRankModel(tuple(layers), split.round_index, split.client_id)


# ---------------------------------------------------------------------------
# local training


def head_loss_grads(weights, batch, bias=None):
    """Cross-entropy of the classifier head through reconstructed weights.

    weights[0] is the (classes, features) head; remaining layers do not
    enter the classification path and get zero gradient.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise DomainError("batch needs matching nonempty features and labels")
    logits = x @ weights[0].T
    if bias is not None:
        logits = logits + bias
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    n = x.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads = [dlogits.T @ x] + [np.zeros_like(w) for w in weights[1:]]
    return loss, grads


def _ortho(a: np.ndarray) -> np.ndarray:
    """QR orthonormalization with the sign fixed so it is stable under reuse."""
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def local_update(
    split: DualSplit,
    batches,
    steps: int,
    lr: float,
    loss_grads=head_loss_grads,
) -> DualSplit:
    """Gradient descent on core factor entries; auxiliary triplets frozen.

    Each step reconstructs the full weights, pulls the task gradient back
    onto the core u, s, v entries, takes a plain descent step, and
    re-orthonormalizes the core column blocks by QR (s clipped at zero).
    """
    if steps < 1:
        raise DomainError(f"steps={steps} must be >= 1")
    batches = list(batches)
    if not batches:
        raise DomainError("need at least one batch")
    core = list(split.core)
    for step in range(steps):
        weights = [
            reconstruct(c) + reconstruct(a)
            for c, a in zip(core, split.auxiliary)
        ]
        loss, grads = loss_grads(weights, batches[step % len(batches)])
        if not math.isfinite(loss):
            raise DomainError(f"non-finite loss {loss}; update aborted")
        if lr == 0.0:
            continue
        for i, (c, g) in enumerate(zip(core, grads)):
            if c.r == 0 or not np.any(g):
                continue
            us = c.u * c.s
            vs = c.v * c.s
            new_u = c.u - lr * (g @ vs)
            new_s = c.s - lr * np.diagonal(c.u.T @ g @ c.v)
            new_v = c.v - lr * (g.T @ us)
            core[i] = LayerFactors(
                _ortho(new_u), np.maximum(new_s, 0.0), _ortho(new_v)
            )
    return DualSplit(
        tuple(core), split.auxiliary, split.round_index, split.client_id
    )


# ---------------------------------------------------------------------------
# masked uploads

# per-layer payload framing: (layer index, r, u row-major, s, v row-major),
# with u, s, v written at an agreed slot width >= r and zero padded beyond
# r. A roster must share one slot width per layer or the pairwise mask
# streams could not line up element for element.


def flatten_factors(model: LowRankModel, slots=None):
    """Flatten to one float64 vector; returns (vector, layout of (m, n, slot))."""
    if slots is None:
        slots = [f.r for f in model.layers]
    if len(slots) != len(model.layers):
        raise DomainError(f"{len(slots)} slot widths for {len(model.layers)} layers")
    parts, layout = [], []
    for i, (f, slot) in enumerate(zip(model.layers, slots)):
        slot = int(slot)
        if slot < f.r:
            raise DomainError(f"layer {i} rank {f.r} exceeds slot width {slot}")
        pad = slot - f.r
        parts.append(np.array([float(i), float(f.r)]))
        parts.append(np.pad(f.u, ((0, 0), (0, pad))).ravel())
        parts.append(np.pad(f.s, (0, pad)))
        parts.append(np.pad(f.v, ((0, 0), (0, pad))).ravel())
        layout.append((f.m, f.n, slot))
    return np.concatenate(parts), tuple(layout)


def unflatten_factors(vec: np.ndarray, layout) -> LowRankModel:
    """Rebuild a model from a flat payload, checking the embedded framing."""
    vec = np.asarray(vec, dtype=np.float64)
    pos = 0
    layers = []
    for i, (m, n, slot) in enumerate(layout):
        need = 2 + slot * (m + n + 1)
        if pos + need > vec.size:
            raise IntegrityError(f"payload truncated at layer {i}")
        if vec[pos] != float(i):
            raise IntegrityError(f"payload framing mismatch at layer {i}")
        r = vec[pos + 1]
        if r != int(r) or not 1 <= r <= slot:
            raise IntegrityError(f"bad rank field {r} at layer {i}")
        r = int(r)
        pos += 2
        u = vec[pos : pos + m * slot].reshape(m, slot)[:, :r]
        pos += m * slot
        s = vec[pos : pos + r]
        pos += slot
        v = vec[pos : pos + n * slot].reshape(n, slot)[:, :r]
        pos += n * slot
        layers.append(LayerFactors(u, s, v))
    if pos != vec.size:
        raise IntegrityError(f"payload has {vec.size - pos} trailing values")
    return LowRankModel(tuple(layers))


def _pair_stream(id_a, id_b, round_salt, length, secret):
    lo, hi = sorted((int(id_a), int(id_b)))
    seq = np.random.SeedSequence([int(secret), lo, hi, int(round_salt)])
    return np.random.default_rng(seq).uniform(-1.0, 1.0, length)


def mask_update(
    model: LowRankModel,
    self_id: int,
    roster,
    round_salt: int,
    secret: int = DEFAULT_MASK_SECRET,
    slots=None,
) -> MaskedUpdate:
    """Flatten factors and add the pairwise antisymmetric roster mask.

    For each peer the shared stream is drawn from a generator keyed by
    (secret, sorted pair, round salt); the lower id adds it, the higher
    id subtracts it, so the roster-wide mask total is zero. slots, when
    given, is the roster-agreed padded width per layer.
    """
    roster = sorted(int(c) for c in roster)
    if len(set(roster)) != len(roster):
        raise ProtocolError(f"duplicate client ids in roster {roster}")
    if len(roster) < 2:
        raise ProtocolError("roster needs at least 2 clients")
    if int(self_id) not in roster:
        raise ProtocolError(f"client {self_id} missing from roster {roster}")
    if any(c < 0 for c in roster) or round_salt < 0:
        raise DomainError("client ids and round salt must be >= 0")
    flat, layout = flatten_factors(model, slots)
    mask = np.zeros_like(flat)
    for peer in roster:
        if peer == self_id:
            continue
        stream = _pair_stream(self_id, peer, round_salt, flat.size, secret)
        mask += stream if self_id < peer else -stream
    return MaskedUpdate(int(self_id), flat, mask, layout, int(round_salt))


def aggregate(
    uploads,
    weights,
    tau: float = 0.95,
    r_max: int = None,
    round_index: int = 0,
) -> LowRankModel:
    """Sample-weighted average of reconstructed matrices, re-compressed.

    Uploads must cover one consistent roster: same salt, same framing,
    unique ids, and masks that cancel to zero. Client matrices are summed
    in ascending id order so the result is reproducible bit for bit.
    """
    uploads = list(uploads)
    weights = np.asarray(weights, dtype=np.float64)
    if len(uploads) < 2:
        raise ProtocolError("aggregation needs the full roster, >= 2 uploads")
    if weights.shape != (len(uploads),):
        raise DomainError("need one sample weight per upload")
    if not np.all(np.isfinite(weights)) or weights.min() < 0 or weights.sum() == 0:
        raise DomainError("weights must be finite, >= 0, and not all zero")
    ids = [up.client_id for up in uploads]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate uploads for client ids {ids}")
    if len({up.round_salt for up in uploads}) != 1:
        raise ProtocolError("uploads span different round salts")
    # ranks may differ per client, but shapes and slot widths may not
    if len({up.layout for up in uploads}) != 1:
        raise ProtocolError("uploads disagree on payload framing")
    mask_total = np.sum([up.mask for up in uploads], axis=0)
    worst = float(np.max(np.abs(mask_total)))
    if worst > MASK_CANCEL_TOL:
        raise ProtocolError(
            f"masks do not cancel (residual {worst:.3g}); roster mismatch"
        )
    order = np.argsort(ids, kind="stable")
    total = None
    for k in order:
        model = unflatten_factors(uploads[k].factors, uploads[k].layout)
        mats = [weights[k] * reconstruct(f) for f in model.layers]
        if total is None:
            total = mats
        else:
            total = [t + m for t, m in zip(total, mats)]
    scale = weights.sum()
    caps = _layer_caps(r_max, len(total))
    layers = tuple(
        decompose(t / scale, tau, cap) for t, cap in zip(total, caps)
    )
    return LowRankModel(layers, round_index, None)


def reverse_correct(
    global_model: LowRankModel,
    local_model: LowRankModel,
    alpha: float,
    tau: float = 0.95,
    r_max: int = None,
) -> LowRankModel:
    """Blend reconstructions, alpha toward global, and re-compress locally."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha={alpha} must be in [0, 1]")
    if len(global_model.layers) != len(local_model.layers):
        raise DomainError("models have different layer counts")
    caps = _layer_caps(r_max, len(global_model.layers))
    layers = []
    for g, l, cap in zip(global_model.layers, local_model.layers, caps):
        if (g.m, g.n) != (l.m, l.n):
            raise DomainError(
                f"layer shape mismatch: {(g.m, g.n)} vs {(l.m, l.n)}"
            )
        blended = alpha * reconstruct(g) + (1.0 - alpha) * reconstruct(l)
        layers.append(decompose(blended, tau, cap))
    return LowRankModel(
        tuple(layers), global_model.round_index, local_model.client_id
    )


# ---------------------------------------------------------------------------
# round loop


@dataclass
class FedConfig:
    """Knobs for one federation; defaults fit the codec head and decoder.

    tau is the client-side energy target: it decides how hard each
    downlinked model is compressed, which is where the bandwidth budget
    lives. The cloud has no uplink constraint, so aggregation re-factors
    at its own cloud_tau (default 1.0, i.e. exact up to the rank caps);
    repeatedly chopping the tail at both ends of the loop erodes the
    spectrum for nothing. r_max may be one cap or one per layer. The
    default (9, 8) keeps the 10-class head at its full effective rank
    (softmax logits are shift invariant, so one direction is gauge) while
    the total upload, 9*43 + 8*97 = 1163 entries, stays well under the
    2368 dense weights.
    """

    tau: float = 0.95
    cloud_tau: float = 1.0
    r_max: object = (9, 8)
    steps: int = 25
    lr: float = 0.5
    alpha: float = 0.75
    secret: int = DEFAULT_MASK_SECRET

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise DomainError(f"tau={self.tau} must be in (0, 1]")
        if not 0.0 < self.cloud_tau <= 1.0:
            raise DomainError(f"cloud_tau={self.cloud_tau} must be in (0, 1]")
        caps = (
            (self.r_max,)
            if self.r_max is None or np.isscalar(self.r_max)
            else tuple(self.r_max)
        )
        if any(c is not None and c < 1 for c in caps):
            raise DomainError(f"r_max={self.r_max} entries must be >= 1")
        if self.steps < 1:
            raise DomainError(f"steps={self.steps} must be >= 1")
        if self.lr < 0.0 or not 0.0 <= self.alpha <= 1.0:
            raise DomainError("need lr >= 0 and alpha in [0, 1]")


@dataclass
class ClientState:
    """One participant: its id, private batch, and personalized model."""

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    model: LowRankModel = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DomainError("features and labels must align")
        if self.features.shape[0] == 0:
            raise DomainError("client needs at least one sample")


def model_accuracy(model: LowRankModel, features, labels, bias=None) -> float:
    """Classification accuracy of the reconstructed head layer."""
    logits = np.asarray(features, float) @ reconstruct(model.layers[0]).T
    if bias is not None:
        logits = logits + bias
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))


def fed_round(
    cloud: LowRankModel,
    clients,
    config: FedConfig = None,
    eval_features=None,
    eval_labels=None,
    loss_grads=head_loss_grads,
):
    """One synchronized round; returns (new global model, metrics row).

    The cloud model seeds every client that does not hold one yet; after
    that, each client trains onward from its own reverse-corrected model,
    which is where the latest global parameters reach it. Training only
    touches the core triplets. Uploads share a negotiated slot width per
    layer, and the round salt is the cloud round index, so mask streams
    never repeat across rounds. Setting alpha=1 recovers plain broadcast
    behavior: the corrected model is then the global one.
    """
    config = config or FedConfig()
    clients = sorted(clients, key=lambda c: c.client_id)
    if len(clients) < 2:
        raise ProtocolError("federation needs >= 2 clients")
    t0 = time.perf_counter()
    roster = [c.client_id for c in clients]
    salt = cloud.round_index
    locals_, counts = [], []
    for cl in clients:
        start = cloud if cl.model is None else cl.model
        split = split_dual(replace(start, client_id=cl.client_id))
        trained = local_update(
            split,
            [(cl.features, cl.labels)],
            config.steps,
            config.lr,
            loss_grads,
        )
        locals_.append(recombine(trained))
        counts.append(cl.features.shape[0])
    slots = [
        max(local.layers[i].r for local in locals_)
        for i in range(len(cloud.layers))
    ]
    uploads = [
        mask_update(local, cl.client_id, roster, salt, config.secret, slots)
        for cl, local in zip(clients, locals_)
    ]
    new_cloud = aggregate(
        uploads,
        counts,
        config.cloud_tau,
        config.r_max,
        round_index=cloud.round_index + 1,
    )
    for cl, local in zip(clients, locals_):
        cl.model = reverse_correct(
            new_cloud, local, config.alpha, config.tau, config.r_max
        )
    accuracy = float("nan")
    if eval_features is not None:
        accuracy = model_accuracy(new_cloud, eval_features, eval_labels)
    metrics = {
        "round": new_cloud.round_index,
        "accuracy": accuracy,
        "params_uploaded": sum(model_param_count(m) for m in locals_),
        "compression_ratio": compression_ratio(new_cloud),
        "wall_ms": (time.perf_counter() - t0) * 1e3,
    }
    return new_cloud, metrics


def run_federation(
    cloud: LowRankModel,
    clients,
    n_rounds: int,
    config: FedConfig = None,
    eval_features=None,
    eval_labels=None,
    loss_grads=head_loss_grads,
):
    """Repeated fed_round; returns the final global model and metric rows."""
    if n_rounds < 1:
        raise DomainError(f"n_rounds={n_rounds} must be >= 1")
    rows = []
    for _ in range(n_rounds):
        cloud, metrics = fed_round(
            cloud, clients, config, eval_features, eval_labels, loss_grads
        )
        rows.append(metrics)
    return cloud, rows


METRICS_HEADER = ("round", "accuracy", "params_uploaded", "compression_ratio", "wall_ms")


def write_round_metrics(rows, path) -> None:
    """Round metrics as CSV with a fixed header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["round"],
                    f"{row['accuracy']:.10g}",
                    row["params_uploaded"],
                    f"{row['compression_ratio']:.10g}",
                    f"{row['wall_ms']:.10g}",
                ]
            )


def read_round_metrics(path):
    """Parse a metrics CSV back into dict rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(METRICS_HEADER):
            raise DataError(f"unexpected metrics header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(
                {
                    "round": int(rec["round"]),
                    "accuracy": float(rec["accuracy"]),
                    "params_uploaded": int(rec["params_uploaded"]),
                    "compression_ratio": float(rec["compression_ratio"]),
                    "wall_ms": float(rec["wall_ms"]),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# codec bindings


def model_from_codec(model: codec.CodecModel, tau: float = 0.95, r_max=(9, 8)):
    """Factor the codec's weight matrices (head, then decoder)."""
    caps = _layer_caps(r_max, 2)
    return LowRankModel(
        (
            decompose(model.head_w, tau, caps[0]),
            decompose(model.dec_w, tau, caps[1]),
        )
    )


def apply_to_codec(lowrank: LowRankModel, model: codec.CodecModel):
    """Codec with its matrices replaced by the reconstructed ones."""
    if len(lowrank.layers) != 2:
        raise DomainError("expected head and decoder layers")
    return replace(
        model,
        head_w=reconstruct(lowrank.layers[0]),
        dec_w=reconstruct(lowrank.layers[1]),
    )


# ---------------------------------------------------------------------------
# dense reference pipeline (no compression, no masking)


def dense_fedavg_round(cloud_weights, clients, steps, lr, loss_grads=head_loss_grads):
    """Plain FedAvg on dense matrices; the uncompressed comparison run."""
    clients = sorted(clients, key=lambda c: c.client_id)
    if len(clients) < 2:
        raise ProtocolError("federation needs >= 2 clients")
    total = [np.zeros_like(w) for w in cloud_weights]
    scale = 0.0
    for cl in clients:
        weights = [w.copy() for w in cloud_weights]
        for _ in range(steps):
            loss, grads = loss_grads(weights, (cl.features, cl.labels))
            if not math.isfinite(loss):
                raise DomainError(f"non-finite loss {loss}; update aborted")
            weights = [w - lr * g for w, g in zip(weights, grads)]
        n = cl.features.shape[0]
        total = [t + n * w for t, w in zip(total, weights)]
        scale += n
    return [t / scale for t in total]


def run_dense_fedavg(cloud_weights, clients, n_rounds, steps, lr,
                     loss_grads=head_loss_grads):
    """Repeated dense rounds from the same starting weights."""
    weights = [np.asarray(w, dtype=np.float64).copy() for w in cloud_weights]
    for _ in range(n_rounds):
        weights = dense_fedavg_round(weights, clients, steps, lr, loss_grads)
    return weights


def dense_accuracy(weights, features, labels, bias=None) -> float:
    logits = np.asarray(features, float) @ weights[0].T
    if bias is not None:
        logits = logits + bias
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))
