from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from models.scene import ScenarioKind, SIMULATED_KINDS

# 各场景类型允许的智能体数量范围
AGENT_LIMITS = {
    ScenarioKind.FOLLOWING: (2, 8),
    ScenarioKind.OVERTAKING: (2, 6),
    ScenarioKind.INTERSECTION: (2, 4),
    ScenarioKind.AGGRESSIVE: (2, 4),
}


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind
    n_agents: int
    seed: int
    noise_std: float = 0.0
    dt: float = 0.2
    t_h: int = 15
    t_p: int = 40
    index: int = 0

    def __post_init__(self):
        kind = ScenarioKind(self.kind)
        object.__setattr__(self, 'kind', kind)
        if kind not in SIMULATED_KINDS:
            raise ValueError(f"仿真器不支持场景类型: {kind.value}")
        low, high = AGENT_LIMITS[kind]
        if not (low <= self.n_agents <= high):
            raise ValueError(f"{kind.value} 场景的智能体数量必须在 [{low}, {high}] 内，当前 {self.n_agents}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std 不能为负数: {self.noise_std}")
        if self.dt <= 0 or not (0 < self.t_h < self.t_p):
            raise ValueError(f"时间参数非法: dt={self.dt}, t_h={self.t_h}, t_p={self.t_p}")

    @property
    def scene_id(self) -> str:
        return f"{self.kind.value}-{self.index:04d}"


@dataclass(frozen=True)
class CollisionLabel:
    """
    碰撞标注

    events 为 (u, v, frame)，u < v 为场景内的智能体下标，frame 从1开始；
    flags[m] 表示第 m 条轨迹是否出现在任一事件中。
    """

    scene_id: str
    events: Tuple[Tuple[int, int, int], ...]
    flags: Tuple[bool, ...]

    def episodes(self) -> List[Tuple[int, int, int, int]]:
        """同一对智能体在连续帧上的事件合并为一次，返回 (u, v, 起始帧, 结束帧)"""
        result: List[Tuple[int, int, int, int]] = []
        for u, v, frame in sorted(self.events):
            if result and result[-1][0] == u and result[-1][1] == v and result[-1][3] == frame - 1:
                result[-1] = (u, v, result[-1][2], frame)
            else:
                result.append((u, v, frame, frame))
        return result

    def to_json(self) -> Dict[str, Any]:
        return {
            'scene_id': self.scene_id,
            'events': [list(e) for e in self.events],
            'flags': list(self.flags),
            'episodes': [list(e) for e in self.episodes()],
        }
