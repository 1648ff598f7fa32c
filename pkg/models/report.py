from dataclasses import dataclass, field
from typing import Any, Dict


@dataclass
class EvalReport:
    """评估结果：碰撞率（%）、各预测时域的 RMSE（米）以及按场景类型的细分"""

    name: str
    collision_rate: float
    rmse_by_horizon: Dict[str, float]
    scene_count: int
    trajectory_count: int
    per_scenario: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.collision_rate <= 100.0):
            raise ValueError(f"碰撞率必须在 [0, 100] 内: {self.collision_rate}")
        if any(v < 0 for v in self.rmse_by_horizon.values()):
            raise ValueError("RMSE 不能为负数")

    def to_json(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'collision_rate': self.collision_rate,
            'rmse_by_horizon': dict(self.rmse_by_horizon),
            'scene_count': self.scene_count,
            'trajectory_count': self.trajectory_count,
            'per_scenario': self.per_scenario,
        }

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> 'EvalReport':
        try:
            return cls(
                name=payload['name'],
                collision_rate=float(payload['collision_rate']),
                rmse_by_horizon={k: float(v) for k, v in payload['rmse_by_horizon'].items()},
                scene_count=int(payload['scene_count']),
                trajectory_count=int(payload['trajectory_count']),
                per_scenario=payload.get('per_scenario', {}),
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"评估报告格式错误: {str(e)}")
