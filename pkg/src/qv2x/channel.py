"""Link-level semantic channel: fading, capacity, rate adaptation, knowledge base.

The channel is first-order Gauss-Markov Rayleigh fading with a bounded
random walk on SNR. Features travel as analog values; the receiver
equalizes with perfect channel knowledge. A static prototype dictionary
(the knowledge base) substitutes token ids for feature vectors it already
knows, so redundant payload never hits the channel.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import DomainError, IntegrityError

HIGH_RATE = "HIGH_RATE"
ROBUST = "ROBUST"

RHO_DEFAULT = 0.95
SNR_BOUNDS_DB = (0.0, 30.0)
SNR_STEP_DB = 1.0
H_FLOOR = 1e-6


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _draw_fading(rng) -> complex:
    # CN(0,1): each quadrature N(0, 1/2), so E|h|^2 = 1
    h = complex(*(rng.normal(0.0, np.sqrt(0.5), 2)))
    while abs(h) < H_FLOOR:
        h = complex(*(rng.normal(0.0, np.sqrt(0.5), 2)))
    return h


@dataclass
class ChannelState:
    """Current link condition of one vehicle-to-infrastructure hop."""

    snr_db: float
    fading: complex
    coherence_steps: int = 1
    protocol_mode: str = HIGH_RATE

    def __post_init__(self):
        if self.coherence_steps < 1:
            raise DomainError(f"coherence_steps {self.coherence_steps} must be >= 1")
        if self.protocol_mode not in (HIGH_RATE, ROBUST):
            raise DomainError(f"unknown protocol mode {self.protocol_mode!r}")


def init_channel(rng, snr_db: float = 20.0) -> ChannelState:
    """Fresh state with a Rayleigh draw for the fading coefficient."""
    return ChannelState(snr_db=float(snr_db), fading=_draw_fading(_as_rng(rng)))


def evolve_channel(
    state: ChannelState,
    rng,
    rho: float = RHO_DEFAULT,
    snr_step_db: float = SNR_STEP_DB,
    snr_bounds_db: tuple[float, float] = SNR_BOUNDS_DB,
) -> ChannelState:
    """One Gauss-Markov step: h' = rho h + sqrt(1 - rho^2) CN(0,1).

    snr_db takes a Gaussian step of scale snr_step_db, clipped to
    snr_bounds_db. Draw order is fixed (fading, then snr, then any
    floor redraws), so a given seed yields one trajectory.
    """
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho {rho} outside [0, 1]")
    rng = _as_rng(rng)
    innov = complex(*(rng.normal(0.0, np.sqrt(0.5), 2)))
    h = rho * state.fading + np.sqrt(1.0 - rho * rho) * innov
    snr = float(np.clip(state.snr_db + snr_step_db * rng.normal(), *snr_bounds_db))
    while abs(h) < H_FLOOR:
        h = _draw_fading(rng)
    return ChannelState(
        snr_db=snr,
        fading=h,
        coherence_steps=state.coherence_steps,
        protocol_mode=state.protocol_mode,
    )


def semantic_capacity(state: ChannelState) -> float:
    """Shannon capacity log2(1 + |h|^2 snr) in bits per channel use."""
    snr_lin = 10.0 ** (state.snr_db / 10.0)
    return float(np.log2(1.0 + abs(state.fading) ** 2 * snr_lin))


@dataclass(frozen=True)
class RateDecision:
    protocol_mode: str
    latent_dims_to_send: int


def adapt_rate(
    state: ChannelState, capacity: float, thresholds, latent_dim: int
) -> RateDecision:
    """Pick HIGH_RATE (full latent) above the top threshold, else ROBUST.

    ROBUST truncates to the first half of the feature indices.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise DomainError(f"thresholds {thresholds} must be nonempty ascending")
    if latent_dim < 1:
        raise DomainError(f"latent_dim {latent_dim} must be >= 1")
    if capacity >= thresholds[-1]:
        return RateDecision(HIGH_RATE, latent_dim)
    return RateDecision(ROBUST, latent_dim // 2)


def transmit(features: np.ndarray, state: ChannelState, rng) -> np.ndarray:
    """Push real features through the faded link and equalize.

    y = h x + n, with sigma^2 = mean(|x|^2) / snr_linear the noise
    variance of each quadrature; the receiver returns Re(y / h) clamped
    to [-1, 1], so at h = 1 the equalized error variance is sigma^2.
    A fading coefficient under the floor is regenerated in place first.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise DomainError("cannot transmit an empty feature vector")
    rng = _as_rng(rng)
    if abs(state.fading) < H_FLOOR:
        state.fading = _draw_fading(rng)
    h = state.fading
    snr_lin = 10.0 ** (state.snr_db / 10.0)
    if snr_lin <= 0.0:
        raise DomainError(f"snr {state.snr_db} dB leaves no finite noise model")
    y = h * x
    if np.isfinite(snr_lin):
        sigma = np.sqrt(float(np.mean(x * x)) / snr_lin)
        noise = rng.normal(0.0, sigma, (*x.shape, 2))
        y = y + noise[..., 0] + 1j * noise[..., 1]
    return np.clip(np.real(y / h), -1.0, 1.0)


# -- knowledge base -----------------------------------------------------------


@dataclass
class KnowledgeBase:
    """Prototype dictionary; token ids stand in for feature rows they match."""

    entries: list
    match_tol: float

    def __post_init__(self):
        if self.match_tol < 0.0:
            raise DomainError(f"match_tol {self.match_tol} must be >= 0")
        ids = [tid for tid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate token ids")
        if any(tid < 0 for tid in ids):
            raise DomainError("token ids must be nonnegative")
        dims = {np.asarray(p).shape for _, p in self.entries}
        if len(dims) > 1:
            raise DomainError(f"prototypes disagree on dimension: {dims}")

    def lookup(self, token_id: int) -> np.ndarray:
        for tid, proto in self.entries:
            if tid == token_id:
                return np.asarray(proto, dtype=np.float64)
        raise IntegrityError(f"unknown token id {token_id}")


def build_kb(features: np.ndarray, k: int = 32, match_tol: float = 0.05, seed=0):
    """Cluster training features into k prototypes with token ids 0..k-1."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < k:
        raise DomainError(f"need at least {k} feature rows, got {feats.shape}")
    centroids, _ = kmeans2(feats, k, minit="++", seed=np.random.default_rng(seed))
    entries = [(i, centroids[i].copy()) for i in range(k)]
    return KnowledgeBase(entries=entries, match_tol=float(match_tol))


def kb_compress(features: np.ndarray, kb: KnowledgeBase):
    """Replace rows near a prototype by its token id.

    Returns (tokens, residual): tokens has one entry per row, -1 marking a
    raw row; residual stacks the raw rows in order. Within-tolerance ties
    go to the lowest token id.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if not kb.entries:
        return np.full(feats.shape[0], -1, dtype=np.int64), feats.copy()
    ids = np.array([tid for tid, _ in kb.entries], dtype=np.int64)
    protos = np.stack([np.asarray(p, dtype=np.float64) for _, p in kb.entries])
    if protos.shape[1] != feats.shape[1]:
        raise DomainError(
            f"feature dim {feats.shape[1]} != prototype dim {protos.shape[1]}"
        )
    order = np.argsort(ids)
    ids, protos = ids[order], protos[order]
    dists = np.sqrt(((feats[:, None, :] - protos[None]) ** 2).sum(axis=-1))
    # stable argmin over sorted ids implements the lowest-id tie-break
    best = np.argmin(dists, axis=1)
    matched = dists[np.arange(feats.shape[0]), best] <= kb.match_tol
    tokens = np.where(matched, ids[best], -1).astype(np.int64)
    residual = feats[~matched].copy()
    return tokens, residual


def kb_decompress(tokens, residual: np.ndarray, kb: KnowledgeBase) -> np.ndarray:
    """Rebuild the feature rows, substituting prototypes for tokens."""
    tokens = np.asarray(tokens, dtype=np.int64)
    residual = np.atleast_2d(np.asarray(residual, dtype=np.float64))
    n_raw = int(np.sum(tokens < 0))
    if residual.shape[0] != n_raw and not (n_raw == 0 and residual.size == 0):
        raise DomainError(
            f"residual has {residual.shape[0]} rows, tokens mark {n_raw} raw"
        )
    dim = (
        residual.shape[1]
        if residual.size
        else np.asarray(kb.entries[0][1]).shape[0]
        if kb.entries
        else 0
    )
    out = np.empty((tokens.size, dim))
    raw_at = 0
    for i, tok in enumerate(tokens):
        if tok < 0:
            out[i] = residual[raw_at]
            raw_at += 1
        else:
            out[i] = kb.lookup(int(tok))
    return out


@dataclass(frozen=True)
class TransmitReport:
    """Per-transmission accounting for the link logs."""

    payload_dims_sent: int
    tokens_substituted: int
    effective_snr_db: float

    def __post_init__(self):
        if self.payload_dims_sent < 0 or self.tokens_substituted < 0:
            raise DomainError("report counts must be nonnegative")


def export_trace(rows, path) -> None:
    """Write (step, ChannelState) pairs as the channel trace CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "snr_db", "re_h", "im_h", "capacity", "protocol_mode"])
        for step, state in rows:
            writer.writerow(
                [
                    step,
                    format(state.snr_db, ".10g"),
                    format(state.fading.real, ".10g"),
                    format(state.fading.imag, ".10g"),
                    format(semantic_capacity(state), ".10g"),
                    state.protocol_mode,
                ]
            )
