"""Model-transfer decisions by a quantum actor-critic.

A vehicle summarizes itself as four scalars, angle-encoded on four wires.
The actor reads per-wire <Z> on wires 0..2 through a temperature softmax
to pick between local fine-tuning, pulling the global model, and sharing
with a neighbor; the critic reads a scaled <Z_0> as the state value.
Both circuits stack rotation layers with CNOTs funneled into wire 3, so
at zero parameters the readouts reduce to the plain encoded angles.
Updates are one-step TD with all quantum gradients by the shift rule.
Cross-domain alignment adds a kernel two-sample term on affinely mapped
feature batches.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

import numpy as np

from . import channel as v2xchannel
from . import qcore
from .dataio import bundled_path
from .errors import DataError, DomainError

ACTIONS = ("FINE_TUNE_LOCAL", "RECEIVE_GLOBAL", "SHARE_WITH_NEIGHBOR")
N_WIRES = 4
READOUT_WIRES = (0, 1, 2)

# capacity at the snr ceiling with unit fading, used to squash capacity
# into the [0, 1] channel-quality component
MAX_CAPACITY_BITS = float(np.log2(1.0 + 10.0**3))


def _unit(x, name):
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{name} {x} outside [0, 1]")
    return x


@dataclass(frozen=True, eq=False)
class VehicleState:
    """Local situation sketch: data histogram, channel, neighbors, accuracy."""

    data_summary: np.ndarray
    channel_quality: float
    neighbor_code: float
    local_accuracy: float

    def __post_init__(self):
        ds = np.asarray(self.data_summary, dtype=np.float64)
        object.__setattr__(self, "data_summary", ds)
        if ds.shape != (4,):
            raise DomainError(f"data_summary shape {ds.shape} != (4,)")
        if ds.min() < 0.0 or ds.max() > 1.0:
            raise DomainError("data_summary components outside [0, 1]")
        object.__setattr__(
            self, "channel_quality", _unit(self.channel_quality, "channel_quality")
        )
        object.__setattr__(
            self, "neighbor_code", _unit(self.neighbor_code, "neighbor_code")
        )
        object.__setattr__(
            self, "local_accuracy", _unit(self.local_accuracy, "local_accuracy")
        )


@dataclass(frozen=True)
class RewardWeights:
    """Trade-off weights for latency, accuracy gain, and consistency."""

    w_lat: float = 0.3
    w_acc: float = 0.5
    w_sem: float = 0.2

    def __post_init__(self):
        if min(self.w_lat, self.w_acc, self.w_sem) < 0.0:
            raise DomainError("reward weights must be >= 0")
        if self.w_lat == self.w_acc == self.w_sem == 0.0:
            raise DomainError("reward weights must not all be zero")


@dataclass(frozen=True, eq=False)
class ActorCritic:
    """Paired 4-qubit policy and value circuits with their parameters."""

    actor_circuit: qcore.Circuit
    actor_params: np.ndarray
    critic_circuit: qcore.Circuit
    critic_params: np.ndarray
    tau: float = 1.0
    gamma: float = 0.95
    v_scale: float = 10.0

    def __post_init__(self):
        for name in ("actor", "critic"):
            circ = getattr(self, f"{name}_circuit")
            if circ.n_qubits != N_WIRES:
                raise DomainError(f"{name} circuit must span {N_WIRES} wires")
            params = np.asarray(getattr(self, f"{name}_params"), dtype=np.float64)
            object.__setattr__(self, f"{name}_params", params)
            if params.shape != (circ.n_params,):
                raise DomainError(
                    f"{name} params shape {params.shape} != ({circ.n_params},)"
                )
            if not np.all(np.isfinite(params)):
                raise DomainError(f"{name} params must be finite")
        if not self.tau > 0.0:
            raise DomainError(f"tau {self.tau} must be > 0")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma {self.gamma} outside [0, 1)")


@dataclass(frozen=True, eq=False)
class DomainMap:
    """Affine transform into the shared feature space plus alignment weight."""

    matrix: np.ndarray
    offset: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.offset, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", b)
        if m.ndim != 2 or b.shape != (m.shape[0],):
            raise DomainError(
                f"offset shape {b.shape} inconsistent with matrix {m.shape}"
            )
        if self.beta < 0.0:
            raise DomainError(f"beta {self.beta} must be >= 0")


def star_ansatz(n_qubits: int, n_layers: int) -> qcore.Circuit:
    """Rotation layers with CNOTs funneled into the last wire.

    Per layer: RY, RZ on every wire, then CNOT(w, n-1) for each other
    wire. The readout wires are never CNOT targets, so the zero-parameter
    circuit leaves every <Z_w> at its encoded value; with two or more
    layers the later rotations expose the funneled phase to the readouts.
    """
    if n_layers < 1:
        raise DomainError(f"n_layers={n_layers} must be >= 1")
    ops = []
    slot = 0
    for _ in range(n_layers):
        for w in range(n_qubits):
            ops.append(qcore.GateOp("RY", (w,), param_slot=slot))
            ops.append(qcore.GateOp("RZ", (w,), param_slot=slot + 1))
            slot += 2
        for w in range(n_qubits - 1):
            ops.append(qcore.GateOp("CNOT", (w, n_qubits - 1)))
    return qcore.Circuit(n_qubits, tuple(ops), slot)


def init_actor_critic(
    seed_or_rng,
    n_layers: int = 2,
    tau: float = 1.0,
    gamma: float = 0.95,
    v_scale: float = 10.0,
) -> ActorCritic:
    """Fresh actor-critic with small uniform parameters."""
    rng = np.random.default_rng(seed_or_rng)
    actor = star_ansatz(N_WIRES, n_layers)
    critic = star_ansatz(N_WIRES, n_layers)
    return ActorCritic(
        actor_circuit=actor,
        actor_params=rng.uniform(-0.1, 0.1, actor.n_params),
        critic_circuit=critic,
        critic_params=rng.uniform(-0.1, 0.1, critic.n_params),
        tau=tau,
        gamma=gamma,
        v_scale=v_scale,
    )


def encode_state(s: VehicleState) -> np.ndarray:
    """Four angles pi*x: data-summary mean, channel, neighbors, accuracy."""
    x = np.array(
        [
            float(np.mean(s.data_summary)),
            s.channel_quality,
            s.neighbor_code,
            s.local_accuracy,
        ]
    )
    return np.pi * x


def _input_amps(s: VehicleState) -> np.ndarray:
    return qcore.encoded_product_amps(encode_state(s))


def softmax_policy(z: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax; strictly positive and exactly normalized."""
    if not tau > 0.0:
        raise DomainError(f"tau {tau} must be > 0")
    t = np.asarray(z, dtype=np.float64) / tau
    e = np.exp(t - t.max())
    return e / e.sum()


def _actor_readouts(ac: ActorCritic, s: VehicleState) -> np.ndarray:
    out = qcore.apply_circuit_amps(
        _input_amps(s), ac.actor_circuit, ac.actor_params
    )
    return np.array(
        [float(qcore.expect_z_amps(out, N_WIRES, (w,))) for w in READOUT_WIRES]
    )


def policy(ac: ActorCritic, s: VehicleState) -> np.ndarray:
    """Action distribution softmax(<Z_012> / tau) of the actor circuit."""
    return softmax_policy(_actor_readouts(ac, s), ac.tau)


def value(ac: ActorCritic, s: VehicleState) -> float:
    """Critic state value: v_scale times <Z_0> after the critic circuit."""
    out = qcore.apply_circuit_amps(
        _input_amps(s), ac.critic_circuit, ac.critic_params
    )
    return ac.v_scale * float(qcore.expect_z_amps(out, N_WIRES, (0,)))


def _readout_grads(circuit, params, input_amps, wires) -> np.ndarray:
    """Shift-rule d<Z_w>/dtheta for several wires in one batched pass."""
    p = circuit.n_params
    shifts = np.tile(params, (2 * p, 1))
    rows = np.arange(p)
    shifts[rows, rows] += 0.5 * np.pi
    shifts[p + rows, rows] -= 0.5 * np.pi
    amps = qcore.apply_circuit_amps(input_amps, circuit, shifts)
    vals = np.stack(
        [qcore.expect_z_amps(amps, N_WIRES, (w,)) for w in wires], axis=0
    )
    return 0.5 * (vals[:, :p] - vals[:, p:])


def ac_update(
    ac: ActorCritic,
    transition: tuple,
    lr_actor: float = 0.02,
    lr_critic: float = 0.02,
) -> tuple[ActorCritic, float]:
    """One TD(0) step; returns the updated model and its TD error.

    delta = r + gamma V(s') - V(s); the critic follows the semi-gradient
    delta * dV(s), the actor ascends delta * dlog pi(a|s).
    """
    s, a, r, s_next = transition
    a_idx = ACTIONS.index(a) if isinstance(a, str) else int(a)
    if not 0 <= a_idx < len(ACTIONS):
        raise DomainError(f"action index {a_idx} outside [0, 3)")
    delta = r + ac.gamma * value(ac, s_next) - value(ac, s)
    if not np.isfinite(delta):
        raise DomainError(f"TD error {delta} is not finite")
    amps = _input_amps(s)
    dv = ac.v_scale * _readout_grads(
        ac.critic_circuit, ac.critic_params, amps, (0,)
    )[0]
    dz = _readout_grads(ac.actor_circuit, ac.actor_params, amps, READOUT_WIRES)
    probs = policy(ac, s)
    dlogpi = (dz[a_idx] - probs @ dz) / ac.tau
    return (
        replace(
            ac,
            actor_params=ac.actor_params + lr_actor * delta * dlogpi,
            critic_params=ac.critic_params + lr_critic * delta * dv,
        ),
        float(delta),
    )


# ---------------------------------------------------------------------------
# environment dynamics


@dataclass
class TransferEnvConfig:
    """Simulated transfer dynamics knobs plus the live channel it rides on."""

    channel: v2xchannel.ChannelState
    fine_tune_gain: float = 0.3
    fine_tune_latency: float = 0.05
    global_accuracy: float = 0.95
    receive_pull: float = 0.5
    transfer_cost: float = 0.2
    capacity_floor: float = 0.1
    share_latency: float = 0.1
    share_consistency: float = 0.3
    share_neighbor_boost: float = 0.1


def default_env(rng) -> TransferEnvConfig:
    return TransferEnvConfig(channel=v2xchannel.init_channel(rng))


def step_env(
    s: VehicleState,
    a,
    w: RewardWeights,
    env_config: TransferEnvConfig,
    rng,
) -> tuple[VehicleState, float]:
    """Advance the simulated vehicle one decision step.

    Fine-tuning closes a fraction of the local accuracy gap cheaply;
    pulling the global model closes the gap to the global accuracy at a
    latency cost growing as the channel capacity shrinks; sharing buys a
    consistency bonus at medium latency. The channel always evolves one
    step and refreshes the channel-quality component.
    """
    cfg = env_config
    cfg.channel = v2xchannel.evolve_channel(cfg.channel, rng)
    capacity = v2xchannel.semantic_capacity(cfg.channel)
    quality = float(np.clip(capacity / MAX_CAPACITY_BITS, 0.0, 1.0))
    return apply_action(s, a, w, cfg, capacity, quality)


def apply_action(
    s: VehicleState,
    a,
    w: RewardWeights,
    env_config: TransferEnvConfig,
    capacity: float,
    quality: float,
) -> tuple[VehicleState, float]:
    """Consequence of one action on an already-evolved channel.

    Split out of step_env so an orchestration loop that owns channel
    evolution itself can still reuse the exact transition arithmetic.
    """
    a_idx = ACTIONS.index(a) if isinstance(a, str) else int(a)
    if not 0 <= a_idx < len(ACTIONS):
        raise DomainError(f"action index {a_idx} outside [0, 3)")
    cfg = env_config
    acc = s.local_accuracy
    neighbor = s.neighbor_code
    consistency = 0.0
    if a_idx == 0:
        acc_next = acc + cfg.fine_tune_gain * (1.0 - acc)
        latency = cfg.fine_tune_latency
    elif a_idx == 1:
        acc_next = acc + cfg.receive_pull * (cfg.global_accuracy - acc)
        latency = cfg.transfer_cost / max(capacity, cfg.capacity_floor)
    else:
        acc_next = acc
        latency = cfg.share_latency
        consistency = cfg.share_consistency
        neighbor = min(1.0, neighbor + cfg.share_neighbor_boost)
    acc_next = float(np.clip(acc_next, 0.0, 1.0))
    reward = w.w_acc * (acc_next - acc) - w.w_lat * latency + w.w_sem * consistency
    s_next = VehicleState(
        data_summary=s.data_summary,
        channel_quality=quality,
        neighbor_code=neighbor,
        local_accuracy=acc_next,
    )
    return s_next, float(reward)


# ---------------------------------------------------------------------------
# frozen tabular fixture


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Deterministic 3-state, 3-action tables plus the embedded states."""

    transitions: np.ndarray
    rewards: np.ndarray
    states: tuple[VehicleState, ...]

    def __post_init__(self):
        t = np.asarray(self.transitions, dtype=np.int64)
        r = np.asarray(self.rewards, dtype=np.float64)
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "rewards", r)
        n = len(self.states)
        if t.shape != (n, len(ACTIONS)) or r.shape != t.shape:
            raise DomainError(f"table shapes {t.shape}/{r.shape} for {n} states")
        if t.min() < 0 or t.max() >= n:
            raise DomainError("transition target outside the state set")


def load_tabular_mdp(tables_path=None, states_path=None) -> TabularMDP:
    """Read the frozen cycle MDP fixture from its CSV tables."""
    tables_path = tables_path or bundled_path("transfer_mdp.csv")
    states_path = states_path or bundled_path("transfer_states.csv")
    rows = []
    with open(tables_path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if i == 0:
                continue
            if len(row) != 4:
                raise DataError(f"line {i + 1}: expected 4 fields, got {len(row)}")
            rows.append((int(row[0]), int(row[1]), int(row[2]), float(row[3])))
    n = max(r[0] for r in rows) + 1
    trans = np.full((n, len(ACTIONS)), -1, dtype=np.int64)
    rewards = np.zeros((n, len(ACTIONS)))
    for s_i, a_i, s_j, r in rows:
        trans[s_i, a_i] = s_j
        rewards[s_i, a_i] = r
    if (trans < 0).any():
        raise DataError("transition table does not cover every (state, action)")
    states = []
    with open(states_path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if i == 0:
                continue
            if len(row) != 8:
                raise DataError(f"line {i + 1}: expected 8 fields, got {len(row)}")
            states.append(
                VehicleState(
                    data_summary=np.array([float(v) for v in row[1:5]]),
                    channel_quality=float(row[5]),
                    neighbor_code=float(row[6]),
                    local_accuracy=float(row[7]),
                )
            )
    if len(states) != n:
        raise DataError(f"{len(states)} embedded states for {n} table states")
    return TabularMDP(trans, rewards, tuple(states))


def step_tabular(mdp: TabularMDP, s_idx: int, a_idx: int) -> tuple[int, float]:
    """Table lookup: next state index and reward."""
    return int(mdp.transitions[s_idx, a_idx]), float(mdp.rewards[s_idx, a_idx])


def greedy_policy(ac: ActorCritic, mdp: TabularMDP) -> tuple[int, ...]:
    """Argmax action of the actor at each embedded fixture state."""
    return tuple(int(np.argmax(policy(ac, s))) for s in mdp.states)


def policy_value(
    mdp: TabularMDP, actions: tuple[int, ...], gamma: float
) -> np.ndarray:
    """Exact value of a deterministic policy on the tables (linear solve)."""
    n = len(mdp.states)
    p = np.zeros((n, n))
    r = np.zeros(n)
    for i, a in enumerate(actions):
        p[i, mdp.transitions[i, a]] = 1.0
        r[i] = mdp.rewards[i, a]
    return np.linalg.solve(np.eye(n) - gamma * p, r)


def train_tabular(
    mdp: TabularMDP,
    seed: int,
    n_episodes: int = 5000,
    steps_per_episode: int = 50,
    lr_actor: float = 0.02,
    lr_critic: float = 0.02,
    n_layers: int = 2,
    tau: float = 1.0,
    gamma: float = 0.95,
    v_scale: float = 2.0,
    check_every: int = 25,
    stop_policy: tuple[int, ...] | None = None,
    log_path=None,
) -> tuple[ActorCritic, list[dict]]:
    """Online actor-critic training on the fixture MDP.

    Episodes start from a uniformly drawn state. When stop_policy is
    given, training stops early once the greedy policy matches it at a
    check point. History rows carry the episode, its return, and the
    greedy policy at every check.

    v_scale defaults to 2 here, not 10: TD stability needs
    lr_critic * v_scale^2 * |grad <Z>|^2 < 2, and the fixture rewards
    are sized so the optimal values fit inside +-2.
    """
    ss = np.random.SeedSequence(seed)
    init_ss, train_ss = ss.spawn(2)
    ac = init_actor_critic(
        np.random.default_rng(init_ss), n_layers, tau, gamma, v_scale
    )
    rng = np.random.default_rng(train_ss)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for episode in range(n_episodes):
            s_idx = int(rng.integers(len(mdp.states)))
            total = 0.0
            for step in range(steps_per_episode):
                probs = policy(ac, mdp.states[s_idx])
                a_idx = int(rng.choice(len(ACTIONS), p=probs))
                s_next, r = step_tabular(mdp, s_idx, a_idx)
                ac, delta = ac_update(
                    ac,
                    (mdp.states[s_idx], a_idx, r, mdp.states[s_next]),
                    lr_actor,
                    lr_critic,
                )
                total += r
                if log_fh is not None:
                    log_fh.write(
                        json.dumps(
                            {
                                "episode": episode,
                                "step": step,
                                "state": s_idx,
                                "action": ACTIONS[a_idx],
                                "reward": r,
                                "td_error": delta,
                            }
                        )
                        + "\n"
                    )
                s_idx = s_next
            row = {"episode": episode, "return": total}
            if (episode + 1) % check_every == 0:
                greedy = greedy_policy(ac, mdp)
                row["greedy"] = greedy
                if stop_policy is not None and greedy == tuple(stop_policy):
                    history.append(row)
                    break
            history.append(row)
    finally:
        if log_fh is not None:
            log_fh.close()
    return ac, history


# ---------------------------------------------------------------------------
# cross-domain alignment


def _gaussian_kernel_matrix(x: np.ndarray, y: np.ndarray, bw: float) -> np.ndarray:
    d2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * bw * bw))


def mmd2(x: np.ndarray, y: np.ndarray) -> float:
    """Biased squared maximum mean discrepancy, Gaussian kernel.

    Bandwidth is the median pairwise distance over the pooled batches,
    floored at 1e-6 so identical-point batches stay finite.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.size == 0 or y.size == 0:
        raise DomainError("feature batches must be nonempty")
    if x.shape[1] != y.shape[1]:
        raise DomainError(
            f"feature dimensions differ: {x.shape[1]} vs {y.shape[1]}"
        )
    pooled = np.vstack([x, y])
    diff = pooled[:, None, :] - pooled[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(pooled.shape[0], k=1)
    bw = max(float(np.median(dist[iu])), 1e-6)
    k_xx = float(np.mean(_gaussian_kernel_matrix(x, x, bw)))
    k_yy = float(np.mean(_gaussian_kernel_matrix(y, y, bw)))
    k_xy = float(np.mean(_gaussian_kernel_matrix(x, y, bw)))
    return max(k_xx + k_yy - 2.0 * k_xy, 0.0)


def apply_domain_map(g: DomainMap, feats: np.ndarray) -> np.ndarray:
    """Affine push of a feature batch into the shared space."""
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if feats.shape[1] != g.matrix.shape[1]:
        raise DomainError(
            f"features dimension {feats.shape[1]} != map input {g.matrix.shape[1]}"
        )
    return feats @ g.matrix.T + g.offset


def align_loss(
    g: DomainMap,
    source_feats: np.ndarray,
    target_feats: np.ndarray,
    task_loss: float,
) -> float:
    """Task loss plus the beta-weighted discrepancy after the domain map."""
    return float(task_loss) + g.beta * mmd2(
        apply_domain_map(g, source_feats), np.atleast_2d(target_feats)
    )
