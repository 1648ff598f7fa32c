"""
四类安全关键场景的确定性生成器，以及基于距离阈值的碰撞标注

- following：同车道车队，头车速度正弦波动，后车按 s0 + 车头时距·v 保持间距
- overtaking：快车从后方接近慢车，纵向间距 ≤ 10 m 时横向偏移 3.5 m，10~20 m 之间余弦过渡
- intersection：最多四个进口道，进入冲突区前必须等所有更高优先级的车驶离，否则停在停车线
- aggressive：关闭让行规则，前两辆车在同一帧到达冲突点
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.settings import RunConfig
from models.scenario import AGENT_LIMITS, CollisionLabel, ScenarioConfig
from models.scene import Dataset, Scene, ScenarioKind, SIMULATED_KINDS, make_scene
from scheduler.pool import map_scenes

logger = logging.getLogger(__name__)

LANE_WIDTH = 3.5
LANE_OFFSET = 1.75
ZONE_RADIUS = 6.0
STOP_LINE = -(ZONE_RADIUS + 1.0)
MIN_STANDSTILL_GAP = 8.0

# 进口道行驶方向：东、北、西、南
HEADINGS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _lane_points(approach: int, xi: np.ndarray) -> np.ndarray:
    """沿进口道路径的有向距离 ξ → 坐标，靠右行驶"""
    d = HEADINGS[approach]
    right = LANE_OFFSET * np.array([d[1], -d[0]])
    return xi[:, None] * d[None, :] + right[None, :]


def _times(cfg: ScenarioConfig) -> np.ndarray:
    return np.arange(cfg.t_p, dtype=np.float64) * cfg.dt


def _following(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    s = _times(cfg)
    v0 = rng.uniform(10.0, 20.0)
    amp = rng.uniform(0.0, 2.0)
    period = rng.uniform(4.0, 8.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    omega = 2.0 * np.pi / period
    leader_speed = v0 + amp * np.sin(omega * s + phase)
    leader_x = v0 * s - amp / omega * (np.cos(omega * s + phase) - np.cos(phase))

    positions = np.zeros((cfg.n_agents, cfg.t_p, 2))
    positions[0, :, 0] = leader_x
    for k in range(1, cfg.n_agents):
        standstill = rng.uniform(MIN_STANDSTILL_GAP, MIN_STANDSTILL_GAP + 4.0)
        headway = rng.uniform(0.8, 1.5)
        positions[k, :, 0] = positions[k - 1, :, 0] - (standstill + headway * leader_speed)
    return positions


def _overtake_offset(gap: np.ndarray) -> np.ndarray:
    ramp = 0.5 * LANE_WIDTH * (1.0 + np.cos(np.pi * (gap - 10.0) / 10.0))
    return np.where(gap <= 10.0, LANE_WIDTH, np.where(gap >= 20.0, 0.0, ramp))


def _overtaking(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    s = _times(cfg)
    slow_speed = rng.uniform(8.0, 12.0)
    fast_speed = slow_speed + rng.uniform(4.0, 8.0)
    start_gap = rng.uniform(25.0, 40.0)

    positions = np.zeros((cfg.n_agents, cfg.t_p, 2))
    positions[1, :, 0] = slow_speed * s
    positions[0, :, 0] = -start_gap + fast_speed * s
    positions[0, :, 1] = _overtake_offset(np.abs(positions[0, :, 0] - positions[1, :, 0]))

    # 其余车辆在相邻车道同速行驶，间距 20 m
    extra_speed = rng.uniform(9.0, 13.0)
    extra_start = rng.uniform(-40.0, 0.0)
    for k in range(2, cfg.n_agents):
        positions[k, :, 0] = extra_start + 20.0 * (k - 2) + extra_speed * s
        positions[k, :, 1] = -LANE_WIDTH
    return positions


def _intersection(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """下标越小优先级越高"""
    speeds = rng.uniform(8.0, 12.0, size=cfg.n_agents)
    xi = STOP_LINE - rng.uniform(5.0, 25.0, size=cfg.n_agents)
    track = np.zeros((cfg.n_agents, cfg.t_p))
    track[:, 0] = xi
    for t in range(1, cfg.t_p):
        previous = track[:, t - 1]
        for k in range(cfg.n_agents):
            advanced = previous[k] + speeds[k] * cfg.dt
            cleared = all(previous[j] > ZONE_RADIUS for j in range(k))
            track[k, t] = advanced if cleared else min(advanced, STOP_LINE)
    return np.stack([_lane_points(k, track[k]) for k in range(cfg.n_agents)])


def _aggressive(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    s = _times(cfg)
    speeds = rng.uniform(8.0, 12.0, size=cfg.n_agents)
    low, high = cfg.t_h + 3, cfg.t_p - 3
    if low > high:
        low, high = 1, cfg.t_p
    conflict_time = (int(rng.integers(low, high + 1)) - 1) * cfg.dt
    tracks = [
        # 东向与北向车道的冲突点在两条路径上分别位于 ξ = +1.75 与 ξ = -1.75
        LANE_OFFSET + speeds[0] * (s - conflict_time),
        -LANE_OFFSET + speeds[1] * (s - conflict_time),
    ]
    for k in range(2, cfg.n_agents):
        tracks.append(STOP_LINE - rng.uniform(5.0, 25.0) + speeds[k] * s)
    return np.stack([_lane_points(k, tracks[k]) for k in range(cfg.n_agents)])


_GENERATORS = {
    ScenarioKind.FOLLOWING: _following,
    ScenarioKind.OVERTAKING: _overtaking,
    ScenarioKind.INTERSECTION: _intersection,
    ScenarioKind.AGGRESSIVE: _aggressive,
}


def generate_scene(cfg: ScenarioConfig) -> Scene:
    """同一配置（含 seed 与 index）总是生成逐位相同的场景"""
    kind_idx = SIMULATED_KINDS.index(cfg.kind)
    rng = np.random.default_rng([cfg.seed, kind_idx, cfg.index])
    positions = _GENERATORS[cfg.kind](cfg, rng)
    if cfg.noise_std > 0:
        positions = positions + rng.normal(0.0, cfg.noise_std, size=positions.shape)
    return make_scene(cfg.scene_id, cfg.kind, cfg.dt, cfg.t_h, positions)


def collision_events(positions: np.ndarray, d_col: float, first_frame: int = 1):
    """
    逐 (智能体对, 帧) 找出距离小于 d_col 的事件

    Args:
        positions: (n, T, 2)
        d_col: 碰撞距离阈值
        first_frame: 只统计帧号 ≥ first_frame 的事件

    Returns:
        (events, flags)
    """
    if d_col <= 0:
        raise ValueError(f"碰撞距离阈值必须大于0: {d_col}")
    n = positions.shape[0]
    events = []
    for u in range(n):
        for v in range(u + 1, n):
            dist = np.linalg.norm(positions[u] - positions[v], axis=1)
            for frame in np.nonzero(dist < d_col)[0] + 1:
                if frame >= first_frame:
                    events.append((u, v, int(frame)))
    flagged = {a for u, v, _ in events for a in (u, v)}
    return tuple(events), tuple(m in flagged for m in range(n))


def label_collisions(scene: Scene, d_col: float) -> CollisionLabel:
    events, flags = collision_events(scene.positions(), d_col)
    return CollisionLabel(scene_id=scene.scene_id, events=events, flags=flags)


def scenario_contract_ok(scene: Scene, label: CollisionLabel) -> bool:
    """无噪声时 aggressive 场景至少有一次碰撞，其余类型没有碰撞"""
    if scene.scenario_kind == ScenarioKind.AGGRESSIVE:
        return len(label.events) > 0
    return len(label.events) == 0


def _agent_count(config: RunConfig, kind: ScenarioKind, index: int) -> int:
    low, high = AGENT_LIMITS[kind]
    low, high = max(low, config.agents_min), min(high, config.agents_max)
    if low > high:
        low = high = min(max(config.agents_min, AGENT_LIMITS[kind][0]), AGENT_LIMITS[kind][1])
    rng = np.random.default_rng([config.seed, SIMULATED_KINDS.index(kind), index, 1])
    return int(rng.integers(low, high + 1))


def generate_dataset(config: RunConfig, counts: Optional[Dict[ScenarioKind, int]] = None) -> Dataset:
    """
    按类型批量生成场景

    Args:
        config: 运行配置（seed、噪声、时间轴、智能体数量范围）
        counts: 每类场景数，默认每类 scenes_per_kind 个

    Returns:
        按类型、序号排列的 Dataset
    """
    if counts is None:
        counts = {kind: config.scenes_per_kind for kind in SIMULATED_KINDS}
    if any(c < 0 for c in counts.values()):
        raise ValueError(f"场景数不能为负数: {counts}")
    configs: List[ScenarioConfig] = []
    for kind in SIMULATED_KINDS:
        for index in range(counts.get(kind, 0)):
            configs.append(ScenarioConfig(
                kind=kind, n_agents=_agent_count(config, kind, index), seed=config.seed,
                noise_std=config.noise_std, dt=config.dt, t_h=config.t_h, t_p=config.t_p, index=index))
    scenes = map_scenes(generate_scene, configs)
    for kind in SIMULATED_KINDS:
        logger.info(f"{kind.value} 场景生成 {counts.get(kind, 0)} 个")
    return Dataset(scenes=scenes)


def label_dataset(scenes: Sequence[Scene], d_col: float) -> List[CollisionLabel]:
    return map_scenes(lambda scene: label_collisions(scene, d_col), scenes)
