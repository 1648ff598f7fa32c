from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple, Any

import numpy as np


class ScenarioKind(str, Enum):
    FOLLOWING = 'following'
    OVERTAKING = 'overtaking'
    INTERSECTION = 'intersection'
    AGGRESSIVE = 'aggressive'
    # 通过CSV导入的外部数据
    EXTERNAL = 'external'


SIMULATED_KINDS = (ScenarioKind.FOLLOWING, ScenarioKind.OVERTAKING,
                   ScenarioKind.INTERSECTION, ScenarioKind.AGGRESSIVE)


@dataclass(frozen=True)
class AgentTrack:
    """单个智能体在场景坐标系下的轨迹，每帧一个 (x, y)，单位米"""

    agent_id: int
    positions: Tuple[Tuple[float, float], ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class Scene:
    """
    一个多智能体场景

    帧 1..t_h 为观测 ζ_h，帧 t_h+1..t_p 为预测目标 ζ_p。帧号从1开始。
    """

    scene_id: str
    scenario_kind: ScenarioKind
    dt: float
    t_h: int
    t_p: int
    tracks: Tuple[AgentTrack, ...]

    def __post_init__(self):
        validate_scene(self)

    @property
    def n(self) -> int:
        return len(self.tracks)

    def positions(self) -> np.ndarray:
        """所有智能体坐标，形状 (n, t_p, 2)"""
        return np.stack([track.as_array() for track in self.tracks], axis=0)

    def history(self) -> np.ndarray:
        return self.positions()[:, :self.t_h, :]

    def future(self) -> np.ndarray:
        return self.positions()[:, self.t_h:, :]


def validate_scene(scene: Scene):
    """校验场景不变量，失败时抛出带 scene_id 的 ValueError"""
    problems = []
    if scene.dt <= 0:
        problems.append(f"dt={scene.dt} 必须大于0")
    if not (0 < scene.t_h < scene.t_p):
        problems.append(f"必须满足 0 < T_h < T_p（T_h={scene.t_h}, T_p={scene.t_p}）")
    if len(scene.tracks) < 1:
        problems.append("至少需要一个智能体")
    ids = [track.agent_id for track in scene.tracks]
    if len(set(ids)) != len(ids):
        problems.append("agent_id 重复")
    for track in scene.tracks:
        if len(track.positions) != scene.t_p:
            problems.append(f"agent {track.agent_id} 的轨迹长度 {len(track.positions)} 不等于 T_p={scene.t_p}")
            continue
        arr = track.as_array()
        if arr.shape != (scene.t_p, 2):
            problems.append(f"agent {track.agent_id} 的坐标必须是二维点")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"agent {track.agent_id} 含有非有限坐标")
    if problems:
        raise ValueError(f"场景 {scene.scene_id} 校验失败: " + '; '.join(problems))


def make_scene(scene_id: str, kind, dt: float, t_h: int, positions: np.ndarray,
               agent_ids=None) -> Scene:
    """由 (n, t_p, 2) 数组构造场景"""
    positions = np.asarray(positions, dtype=np.float64)
    n, t_p = positions.shape[0], positions.shape[1]
    agent_ids = list(range(n)) if agent_ids is None else list(agent_ids)
    tracks = tuple(
        AgentTrack(agent_id=int(agent_ids[m]),
                   positions=tuple((float(x), float(y)) for x, y in positions[m]))
        for m in range(n)
    )
    return Scene(scene_id=scene_id, scenario_kind=ScenarioKind(kind), dt=float(dt),
                 t_h=int(t_h), t_p=int(t_p), tracks=tracks)


@dataclass
class Dataset:
    """场景集合及训练/测试划分"""

    scenes: List[Scene] = field(default_factory=list)
    split: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.split:
            self.split = {scene.scene_id: 'train' for scene in self.scenes}
        ids = [scene.scene_id for scene in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValueError("数据集中存在重复的 scene_id")
        if set(self.split) != set(ids) or not set(self.split.values()) <= {'train', 'test'}:
            raise ValueError("split 必须恰好覆盖每个场景一次，取值为 train/test")

    def train_scenes(self) -> List[Scene]:
        return [s for s in self.scenes if self.split[s.scene_id] == 'train']

    def test_scenes(self) -> List[Scene]:
        return [s for s in self.scenes if self.split[s.scene_id] == 'test']

    def by_id(self) -> Dict[str, Scene]:
        return {s.scene_id: s for s in self.scenes}


def scene_to_record(scene: Scene) -> Dict[str, Any]:
    """场景 → JSONL 记录"""
    return {
        'scene_id': scene.scene_id,
        'kind': scene.scenario_kind.value,
        'dt': scene.dt,
        't_h': scene.t_h,
        't_p': scene.t_p,
        'tracks': [
            {'agent_id': track.agent_id, 'xy': [[x, y] for x, y in track.positions]}
            for track in scene.tracks
        ],
    }


def scene_from_record(record: Dict[str, Any]) -> Scene:
    """JSONL 记录 → 场景，字段缺失或类型错误时抛出 KeyError/TypeError/ValueError"""
    tracks = tuple(
        AgentTrack(agent_id=int(t['agent_id']),
                   positions=tuple((float(p[0]), float(p[1])) for p in t['xy']))
        for t in record['tracks']
    )
    return Scene(
        scene_id=str(record['scene_id']),
        scenario_kind=ScenarioKind(record['kind']),
        dt=float(record['dt']),
        t_h=int(record['t_h']),
        t_p=int(record['t_p']),
        tracks=tracks,
    )
