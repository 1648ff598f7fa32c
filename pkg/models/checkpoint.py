import os
import json
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from config.settings import Settings

RESERVED_KEYS = ('version', 'kind', 'weights')


@dataclass
class Checkpoint:
    """
    模型检查点：命名的扁平权重数组 + 附加元数据

    JSON 结构为 {version, kind, weights: {name: {shape, data}}, ...meta}，
    教师模型的 meta 包含 d_z、q_mixture、feature_stats。
    """

    kind: str
    weights: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)
    version: int = Settings.CHECKPOINT_VERSION

    def to_json(self) -> Dict[str, Any]:
        payload = {
            'version': self.version,
            'kind': self.kind,
            'weights': {
                name: {'shape': list(arr.shape), 'data': np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
                for name, arr in sorted(self.weights.items())
            },
        }
        for key, value in self.meta.items():
            if key in RESERVED_KEYS:
                raise ValueError(f"元数据键名与保留字段冲突: {key}")
            payload[key] = value
        return payload

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> 'Checkpoint':
        try:
            weights = {
                name: np.asarray(entry['data'], dtype=np.float64).reshape(entry['shape'])
                for name, entry in payload['weights'].items()
            }
            meta = {k: v for k, v in payload.items() if k not in RESERVED_KEYS}
            return cls(kind=payload['kind'], weights=weights, meta=meta, version=int(payload['version']))
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"检查点格式错误: {str(e)}")


def save_checkpoint(checkpoint: Checkpoint, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(checkpoint.to_json(), f)


def load_checkpoint(path: str, expected_kind: str = None) -> Checkpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(f"检查点文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"检查点 {path} 不是合法的JSON: {str(e)}")
    checkpoint = Checkpoint.from_json(payload)
    if checkpoint.version > Settings.CHECKPOINT_VERSION:
        raise ValueError(f"检查点版本 {checkpoint.version} 高于当前支持的 {Settings.CHECKPOINT_VERSION}")
    if expected_kind and checkpoint.kind != expected_kind:
        raise ValueError(f"检查点类型为 {checkpoint.kind}，期望 {expected_kind}: {path}")
    return checkpoint
