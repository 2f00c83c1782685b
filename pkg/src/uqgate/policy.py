"""Learned model-selection policy trained offline from logged traces.

Traces record, per frame, the quality every backbone would have achieved,
so the replay environment can hand out counterfactual rewards for any
action. A small value network is trained with the double-estimator
bootstrap (online net picks the argmax, target net evaluates it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .mlp import Adam, ValueNet

ACTIONS = ("nano", "small", "medium", "large", "xlarge")
PARAMS_M = (3.2, 11.2, 25.9, 43.7, 68.2)  # million parameters per backbone
STATE_DIM = 9
HIDDEN = 128


@dataclass(frozen=True)
class ActionSet:
    names: tuple[str, ...] = ACTIONS
    params: tuple[float, ...] = PARAMS_M
    kappa: float = 0.2

    @property
    def costs(self) -> tuple[float, ...]:
        top = self.params[-1]
        return tuple(self.kappa * p / top for p in self.params)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown action label {name!r}") from None


@dataclass(frozen=True)
class RewardConfig:
    lambda_epis: float = 0.2
    lambda_alea: float = 0.2
    tau_epis: float = 0.6
    tau_alea: float = 0.5
    kappa: float = 0.2
    gated_bonus: bool = False  # apply the epistemic bonus only to large actions

    def to_dict(self) -> dict:
        return {
            "lambda_epis": self.lambda_epis,
            "lambda_alea": self.lambda_alea,
            "tau_epis": self.tau_epis,
            "tau_alea": self.tau_alea,
            "kappa": self.kappa,
            "gated_bonus": self.gated_bonus,
        }


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 64
    gamma: float = 0.99
    target_sync: int = 100
    replay_capacity: int = 50_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    steps: int = 15_000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise DataError(f"gamma must lie in [0, 1], got {self.gamma}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch": self.batch,
            "gamma": self.gamma,
            "target_sync": self.target_sync,
            "replay_capacity": self.replay_capacity,
            "eps_start": self.eps_start,
            "eps_end": self.eps_end,
            "eps_decay_steps": self.eps_decay_steps,
            "steps": self.steps,
            "seed": self.seed,
        }


@dataclass
class TraceFrame:
    """One logged frame: what every backbone would have scored."""

    sequence: str
    frame: int
    per_model: dict[str, dict[str, float]]  # name -> {"iou", "y_hat"}
    sigma_alea: float
    sigma_epis: float
    bbox: tuple[float, float, float, float]
    frame_size: tuple[float, float]

    def to_json_obj(self) -> dict:
        return {
            "sequence": self.sequence,
            "frame": self.frame,
            "per_model": {
                k: {"iou": float(v["iou"]), "y_hat": float(v["y_hat"])}
                for k, v in self.per_model.items()
            },
            "sigma_alea": float(self.sigma_alea),
            "sigma_epis": float(self.sigma_epis),
            "bbox": [float(v) for v in self.bbox],
            "frame_size": [float(v) for v in self.frame_size],
        }


@dataclass
class TraceStep:
    """Per-frame simulation state resolved for the currently active model."""

    y_hat: float
    sigma_alea: float
    sigma_epis: float
    bbox: tuple[float, float, float, float]
    frame_size: tuple[float, float]
    model_index: int


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


def load_trace(path) -> list[TraceFrame]:
    frames: list[TraceFrame] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"trace file not found: {path}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                frames.append(
                    TraceFrame(
                        sequence=str(obj["sequence"]),
                        frame=int(obj["frame"]),
                        per_model={
                            str(k): {"iou": float(v["iou"]),
                                     "y_hat": float(v["y_hat"])}
                            for k, v in obj["per_model"].items()
                        },
                        sigma_alea=float(obj["sigma_alea"]),
                        sigma_epis=float(obj["sigma_epis"]),
                        bbox=tuple(float(v) for v in obj["bbox"]),
                        frame_size=tuple(float(v) for v in obj["frame_size"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"trace line {line_no}: malformed frame ({exc})") from exc
    if not frames:
        raise DataError(f"{path}: empty trace file")
    return frames


def save_trace(frames: Sequence[TraceFrame], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fr in frames:
            fh.write(json.dumps(fr.to_json_obj()) + "\n")


def group_episodes(frames: Sequence[TraceFrame]) -> list[list[TraceFrame]]:
    """One episode per sequence, preserving frame order within each."""
    episodes: dict[str, list[TraceFrame]] = {}
    for fr in frames:
        episodes.setdefault(fr.sequence, []).append(fr)
    return [episodes[k] for k in episodes]


def resolve_step(frame: TraceFrame, model_index: int,
                 actions: ActionSet = ActionSet()) -> TraceStep:
    name = actions.names[model_index]
    if name not in frame.per_model:
        raise DataError(
            f"trace frame {frame.sequence}:{frame.frame} is missing the "
            f"{name!r} model column"
        )
    return TraceStep(
        y_hat=frame.per_model[name]["y_hat"],
        sigma_alea=frame.sigma_alea,
        sigma_epis=frame.sigma_epis,
        bbox=frame.bbox,
        frame_size=frame.frame_size,
        model_index=model_index,
    )


def build_state(step: TraceStep, prev: Optional[TraceStep]) -> np.ndarray:
    """9-vector: quality, both uncertainties, their one-step trends, box
    geometry, and the active model index scaled to [0, 1]."""
    x, y, w, h = step.bbox
    W, H = step.frame_size
    if W <= 0 or H <= 0:
        raise DataError("trace frame has non-positive frame size")
    box_size = (w * h) / (W * H)
    border = min(x, y, W - (x + w), H - (y + h))
    edge_dist = np.clip(max(border, 0.0) / (min(W, H) / 2.0), 0.0, 1.0)
    if prev is None:
        deltas = (0.0, 0.0, 0.0)
    else:
        deltas = (
            step.y_hat - prev.y_hat,
            step.sigma_alea - prev.sigma_alea,
            step.sigma_epis - prev.sigma_epis,
        )
    state = np.array(
        [
            step.y_hat,
            step.sigma_alea,
            step.sigma_epis,
            deltas[0],
            deltas[1],
            deltas[2],
            box_size,
            float(edge_dist),
            step.model_index / 4.0,
        ],
        dtype=float,
    )
    if not np.all(np.isfinite(state)):
        raise DataError("non-finite values in policy state")
    return state


def reward(iou: float, action: int, sigma_alea: float, sigma_epis: float,
           cfg: RewardConfig, actions: Optional[ActionSet] = None) -> float:
    """Quality minus capacity cost, adjusted by the uncertainty indicators."""
    acts = actions if actions is not None else ActionSet(kappa=cfg.kappa)
    r = iou - acts.costs[action]
    if sigma_epis > cfg.tau_epis:
        if not cfg.gated_bonus or action >= 3:
            r += cfg.lambda_epis
    if sigma_alea > cfg.tau_alea:
        r -= cfg.lambda_alea
    return r


def double_dqn_target(online: ValueNet, target_net: ValueNet,
                      transition: Transition, gamma: float) -> float:
    """Bootstrapped target: online net selects, target net evaluates."""
    if transition.terminal or gamma == 0.0:
        return transition.reward
    q_online = online.forward(transition.next_state)
    best = int(np.argmax(q_online))  # ties resolve to the lower action index
    q_target = target_net.forward(transition.next_state)
    return transition.reward + gamma * float(q_target[best])


def _batch_targets(online: ValueNet, target_net: ValueNet,
                   rewards: np.ndarray, next_states: np.ndarray,
                   terminal: np.ndarray, gamma: float) -> np.ndarray:
    q_online = np.atleast_2d(online.forward(next_states))
    best = np.argmax(q_online, axis=1)
    q_target = np.atleast_2d(target_net.forward(next_states))
    boot = q_target[np.arange(q_target.shape[0]), best]
    return rewards + gamma * np.where(terminal, 0.0, boot)


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.buffer: list[Transition] = []
        self.pos = 0

    def push(self, tr: Transition) -> None:
        if len(self.buffer) < self.capacity:
            self.buffer.append(tr)
        else:
            self.buffer[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def __len__(self) -> int:
        return len(self.buffer)

    def sample(self, rng: np.random.Generator, batch: int) -> list[Transition]:
        idx = rng.integers(0, len(self.buffer), size=batch)
        return [self.buffer[i] for i in idx]


@dataclass
class SimulationResult:
    sequences: list[str]
    frames: list[int]
    actions: list[int]
    ious: list[float]
    sigma_alea: list[float]
    sigma_epis: list[float]
    switch_count: int
    mean_active_params: float
    mean_iou: float
    action_set: ActionSet = field(default_factory=ActionSet)

    def action_names(self) -> list[str]:
        return [self.action_set.names[a] for a in self.actions]


@dataclass
class TrainResult:
    net: ValueNet
    losses: list[float]
    log_rows: list[tuple[int, float, float, float]]  # step, loss, mean_q, epsilon


def _epsilon(cfg: TrainConfig, step: int) -> float:
    if cfg.eps_decay_steps <= 0:
        return cfg.eps_end
    frac = min(step / cfg.eps_decay_steps, 1.0)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def validate_trace(frames: Sequence[TraceFrame],
                   actions: ActionSet = ActionSet()) -> None:
    for fr in frames:
        for name in actions.names:
            if name not in fr.per_model:
                raise DataError(
                    f"trace frame {fr.sequence}:{fr.frame} is missing the "
                    f"{name!r} model column"
                )


def train_policy(
    frames: Sequence[TraceFrame],
    train_cfg: TrainConfig = TrainConfig(),
    reward_cfg: RewardConfig = RewardConfig(),
) -> TrainResult:
    """Fill a replay buffer by walking the trace with an epsilon-greedy
    behavior policy and fit the value net by double-estimator bootstrapping.

    Fully deterministic for a fixed seed: one generator drives exploration
    and batch sampling, and the net is seeded from the same config.
    """
    actions = ActionSet(kappa=reward_cfg.kappa)
    validate_trace(frames, actions)
    episodes = group_episodes(frames)
    rng = np.random.default_rng(train_cfg.seed)
    net = ValueNet((STATE_DIM, HIDDEN, HIDDEN, len(actions.names)),
                   seed=train_cfg.seed)
    target_net = net.clone()
    optim = Adam(lr=train_cfg.lr)
    replay = ReplayBuffer(train_cfg.replay_capacity)

    losses: list[float] = []
    log_rows: list[tuple[int, float, float, float]] = []

    ep_idx = 0
    frame_idx = 0
    active = 0  # start on the lightest backbone
    prev_step: Optional[TraceStep] = None
    grad_steps = 0

    for step_no in range(train_cfg.steps):
        episode = episodes[ep_idx % len(episodes)]
        frame = episode[frame_idx]
        cur = resolve_step(frame, active, actions)
        state = build_state(cur, prev_step)

        eps = _epsilon(train_cfg, step_no)
        if rng.random() < eps:
            action = int(rng.integers(0, len(actions.names)))
        else:
            action = int(np.argmax(net.forward(state)))

        # The trace logs every backbone's outcome, so each visited state
        # yields one transition per action, not just the taken one.
        terminal = frame_idx == len(episode) - 1
        for a, name in enumerate(actions.names):
            r_a = reward(frame.per_model[name]["iou"], a, frame.sigma_alea,
                         frame.sigma_epis, reward_cfg, actions)
            if terminal:
                next_state_a = np.zeros(STATE_DIM)
            else:
                nxt_a = resolve_step(episode[frame_idx + 1], a, actions)
                next_state_a = build_state(nxt_a, cur)
            replay.push(Transition(state, a, r_a, next_state_a, terminal))

        if terminal:
            next_prev = None
            next_frame_idx = 0
            next_ep = ep_idx + 1
            next_active = 0
        else:
            next_prev = cur
            next_frame_idx = frame_idx + 1
            next_ep = ep_idx
            next_active = action

        if len(replay) >= train_cfg.batch:
            batch = replay.sample(rng, train_cfg.batch)
            states = np.stack([t.state for t in batch])
            acts_arr = np.array([t.action for t in batch])
            rewards = np.array([t.reward for t in batch])
            next_states = np.stack([t.next_state for t in batch])
            terms = np.array([t.terminal for t in batch])
            targets = _batch_targets(net, target_net, rewards, next_states,
                                     terms, train_cfg.gamma)
            grads, loss = net.backward(states, acts_arr, targets)
            optim.step(net.parameters(), grads)
            losses.append(loss)
            grad_steps += 1
            if grad_steps % train_cfg.target_sync == 0:
                target_net.sync_from(net)
            if grad_steps % 100 == 0:
                q = np.atleast_2d(net.forward(states))
                log_rows.append((grad_steps, loss, float(q.mean()), eps))

        prev_step, frame_idx, ep_idx, active = (
            next_prev, next_frame_idx, next_ep, next_active
        )

    return TrainResult(net=net, losses=losses, log_rows=log_rows)


def run_policy(
    net: ValueNet,
    frames: Sequence[TraceFrame],
    greedy: bool = True,
    seed: int = 0,
    actions: ActionSet = ActionSet(),
) -> SimulationResult:
    """Replay a trace under the net; switches are counted within sequences."""
    validate_trace(frames, actions)
    episodes = group_episodes(frames)
    rng = np.random.default_rng(seed)
    seqs: list[str] = []
    frame_ids: list[int] = []
    chosen: list[int] = []
    ious: list[float] = []
    sig_a: list[float] = []
    sig_e: list[float] = []
    switches = 0
    for episode in episodes:
        active = 0
        prev_step: Optional[TraceStep] = None
        prev_action: Optional[int] = None
        for frame in episode:
            cur = resolve_step(frame, active, actions)
            state = build_state(cur, prev_step)
            if greedy:
                action = int(np.argmax(net.forward(state)))
            else:
                action = int(rng.integers(0, len(actions.names)))
            name = actions.names[action]
            seqs.append(frame.sequence)
            frame_ids.append(frame.frame)
            chosen.append(action)
            ious.append(frame.per_model[name]["iou"])
            sig_a.append(frame.sigma_alea)
            sig_e.append(frame.sigma_epis)
            if prev_action is not None and action != prev_action:
                switches += 1
            prev_action = action
            prev_step = cur
            active = action
    mean_params = float(np.mean([actions.params[a] for a in chosen]))
    return SimulationResult(
        sequences=seqs,
        frames=frame_ids,
        actions=chosen,
        ious=ious,
        sigma_alea=sig_a,
        sigma_epis=sig_e,
        switch_count=switches,
        mean_active_params=mean_params,
        mean_iou=float(np.mean(ious)),
        action_set=actions,
    )


def save_checkpoint(net: ValueNet, train_cfg: TrainConfig,
                    reward_cfg: RewardConfig, path) -> None:
    obj = {
        "net": net.to_dict(),
        "train_config": train_cfg.to_dict(),
        "reward_config": reward_cfg.to_dict(),
        "version": 1,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> tuple[ValueNet, dict]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"checkpoint file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: truncated or invalid checkpoint ({exc.msg})") from exc
    if "net" not in obj:
        raise DataError(f"{path}: not a policy checkpoint")
    return ValueNet.from_dict(obj["net"]), obj
