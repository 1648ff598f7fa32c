import os
import json
import logging
from typing import Iterable, Tuple

import numpy as np

from models.graph import FrameGraph, GraphSequence
from models.scene import Scene
from services.scene_service import derive_velocities

logger = logging.getLogger(__name__)

DEFAULT_W_MAX = 100.0


def collision_time(rel_pos: Tuple[float, float], rel_vel: Tuple[float, float]) -> float:
    """
    估计碰撞时间 t_c = max(-(ΔxΔẋ + ΔyΔẏ) / (Δẋ² + Δẏ²), 0)

    即 ‖rel_pos + t·rel_vel‖² 在 t ≥ 0 上的最小点。相对速度为零时返回0。
    """
    dx, dy = float(rel_pos[0]), float(rel_pos[1])
    dvx, dvy = float(rel_vel[0]), float(rel_vel[1])
    denom = dvx * dvx + dvy * dvy
    if denom == 0.0:
        return 0.0
    return max(-(dx * dvx + dy * dvy) / denom, 0.0)


def pairwise_weights(positions: np.ndarray, velocities: np.ndarray, w_max: float = DEFAULT_W_MAX) -> np.ndarray:
    """由同一帧的位置与速度计算边权矩阵，E^{uv} = min(1/t_c, w_max)，t_c = 0 时为0"""
    n = positions.shape[0]
    weights = np.zeros((n, n), dtype=np.float64)
    for u in range(n):
        for v in range(u + 1, n):
            t_c = collision_time(positions[u] - positions[v], velocities[u] - velocities[v])
            if t_c > 0:
                weights[u, v] = weights[v, u] = min(1.0 / t_c, w_max)
    return weights


def build_frame_graph(scene: Scene, t: int, w_max: float = DEFAULT_W_MAX) -> FrameGraph:
    """第 t 帧（1..T_h）的交互图，只使用到第 t 帧为止的数据"""
    if not (1 <= t <= scene.t_h):
        raise ValueError(f"帧号 t={t} 超出观测窗口 1..{scene.t_h}")
    positions = scene.positions()[:, t - 1, :]
    velocities = derive_velocities(scene, t)
    return FrameGraph(n=scene.n, weights=pairwise_weights(positions, velocities, w_max))


def build_graph_sequence(scene: Scene, w_max: float = DEFAULT_W_MAX) -> GraphSequence:
    return GraphSequence(graphs=[build_frame_graph(scene, t, w_max) for t in range(1, scene.t_h + 1)])


def dump_graphs(scenes: Iterable[Scene], path: str, w_max: float = DEFAULT_W_MAX) -> int:
    """把交互图按行写出为 JSONL：{scene_id, t, weights}，weights 按行展开"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for scene in scenes:
            for t, graph in enumerate(build_graph_sequence(scene, w_max), 1):
                f.write(json.dumps({
                    'scene_id': scene.scene_id,
                    't': t,
                    'weights': graph.weights.reshape(-1).tolist(),
                }) + '\n')
                count += 1
    logger.info(f"已写出 {count} 个交互图到 {path}")
    return count
