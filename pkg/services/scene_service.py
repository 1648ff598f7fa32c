import os
import json
import logging
from typing import Dict, List, Any, Optional

import numpy as np
import pandas as pd

from config.settings import Settings
from models.scene import (Dataset, Scene, ScenarioKind, make_scene,
                          scene_from_record, scene_to_record)

logger = logging.getLogger(__name__)


def load_scenes(path: str) -> Dataset:
    """
    读取 JSONL 场景文件，每行一个场景

    Args:
        path: JSONL 文件路径

    Returns:
        按文件顺序排列的 Dataset（默认全部划为 train）
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"场景文件不存在: {path}")

    scenes = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                kinds = {k.value for k in ScenarioKind}
                if record.get('kind') not in kinds:
                    raise ValueError(f"未知场景类型 {record.get('kind')!r}")
                for key in ('scene_id', 'dt', 't_h', 't_p', 'tracks'):
                    if key not in record:
                        raise KeyError(key)
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError, ValueError) as e:
                raise ValueError(f"{path} 第 {line_num} 行解析失败: {str(e)}")
            try:
                scene = scene_from_record(record)
            except (KeyError, TypeError, IndexError) as e:
                raise ValueError(f"{path} 第 {line_num} 行解析失败: {str(e)}")
            scenes.append(scene)

    logger.info(f"已加载 {len(scenes)} 个场景: {path}")
    return Dataset(scenes=scenes)


def save_scenes(dataset: Dataset, path: str):
    """写出 JSONL，浮点数使用 repr 精度，读回后逐位一致"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for scene in dataset.scenes:
            f.write(json.dumps(scene_to_record(scene)) + '\n')
    logger.info(f"已保存 {len(dataset.scenes)} 个场景到 {path}")


def derive_velocities(scene: Scene, t: int) -> np.ndarray:
    """
    第 t 帧（从1开始）各智能体速度，后向差分 (pos_t - pos_{t-1}) / dt

    t = 1 时没有前一帧，沿用 t = 2 的值。

    Returns:
        形状 (n, 2) 的数组，单位 m/s
    """
    if not (1 <= t <= scene.t_p):
        raise ValueError(f"帧号 t={t} 超出范围 1..{scene.t_p}")
    positions = scene.positions()
    t = max(t, 2)
    return (positions[:, t - 1, :] - positions[:, t - 2, :]) / scene.dt


def split_dataset(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """
    按比例随机划分训练/测试集

    划分只取决于 (scene_id 列表, ratio, seed)：先对 id 排序再置换，
    与场景在文件中的顺序无关。
    """
    if not (0 < ratio < 1):
        raise ValueError(f"划分比例必须在 (0, 1) 内: {ratio}")
    if len(dataset.scenes) < 2:
        raise ValueError(f"至少需要2个场景才能划分，当前 {len(dataset.scenes)} 个")

    ids = sorted(scene.scene_id for scene in dataset.scenes)
    n_train = int(round(ratio * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    order = np.random.default_rng(seed).permutation(len(ids))
    train_ids = {ids[i] for i in order[:n_train]}
    split = {sid: ('train' if sid in train_ids else 'test') for sid in ids}
    logger.info(f"数据集划分完成: train={n_train}, test={len(ids) - n_train}")
    return Dataset(scenes=list(dataset.scenes), split=split)


class SceneCsvConverter:
    """把 (scene_id, agent_id, frame, x, y) 格式的CSV转换为场景，分块读取大文件"""

    required_columns = ['scene_id', 'agent_id', 'frame', 'x', 'y']

    def __init__(self, chunk_size: int = None):
        if chunk_size is None:
            chunk_size = Settings.CSV_PROCESSING_CHUNK_SIZE
        self.chunk_size = chunk_size

    def _read_groups(self, csv_path: str) -> Dict[str, pd.DataFrame]:
        all_groups: Dict[str, List[pd.DataFrame]] = {}
        chunk_iter = pd.read_csv(csv_path, chunksize=self.chunk_size,
                                 dtype={'scene_id': str}, skipinitialspace=True)
        for chunk_idx, chunk_df in enumerate(chunk_iter):
            missing_columns = [col for col in self.required_columns if col not in chunk_df.columns]
            if missing_columns:
                raise ValueError(f"缺少必要字段: {missing_columns}")
            chunk_df = chunk_df.dropna(subset=self.required_columns)
            logger.info(f"正在处理第 {chunk_idx + 1} 个数据块，包含 {len(chunk_df)} 行数据")
            for scene_id, group in chunk_df.groupby('scene_id', sort=False):
                all_groups.setdefault(str(scene_id), []).append(group)
        return {sid: pd.concat(parts, ignore_index=True) for sid, parts in all_groups.items()}

    def _to_scene(self, scene_id: str, group: pd.DataFrame, dt: float, t_h: int) -> Optional[Scene]:
        group = group.astype({'agent_id': int, 'frame': int, 'x': float, 'y': float})
        group = group.drop_duplicates(subset=['agent_id', 'frame'], keep='first')
        frames = sorted(group['frame'].unique())
        t_p = len(frames)
        if frames != list(range(frames[0], frames[0] + t_p)):
            logger.warning(f"场景 {scene_id} 的帧号不连续，跳过")
            return None
        if t_p <= t_h:
            logger.warning(f"场景 {scene_id} 只有 {t_p} 帧，不足以覆盖观测窗口 {t_h}，跳过")
            return None
        x = group.pivot(index='agent_id', columns='frame', values='x')
        y = group.pivot(index='agent_id', columns='frame', values='y')
        if x.isna().any().any() or y.isna().any().any():
            # 要求每个智能体覆盖全部帧
            logger.warning(f"场景 {scene_id} 存在中途出现或消失的智能体，跳过")
            return None
        positions = np.stack([x.to_numpy(), y.to_numpy()], axis=-1)
        return make_scene(scene_id, ScenarioKind.EXTERNAL, dt, t_h, positions,
                          agent_ids=x.index.tolist())

    def convert(self, csv_path: str, jsonl_path: str, dt: float, t_h: int) -> Dict[str, Any]:
        """
        转换CSV为JSONL场景文件

        Returns:
            包含处理结果的字典
        """
        if not os.path.exists(csv_path):
            raise FileNotFoundError(f"CSV文件不存在: {csv_path}")
        logger.info(f"开始转换CSV文件: {csv_path}")
        groups = self._read_groups(csv_path)
        scenes = []
        skipped = 0
        for scene_id, group in groups.items():
            scene = self._to_scene(scene_id, group, dt, t_h)
            if scene is None:
                skipped += 1
                continue
            scenes.append(scene)
        save_scenes(Dataset(scenes=scenes), jsonl_path)
        logger.info(f"转换完成！共 {len(scenes)} 个场景，跳过 {skipped} 个")
        return {
            "success": True,
            "message": f"转换完成，生成 {len(scenes)} 个场景，跳过 {skipped} 个",
            "scene_count": len(scenes),
            "skipped": skipped,
            "output_file": jsonl_path,
        }


def convert_csv(csv_path: str, jsonl_path: str, dt: float, t_h: int) -> Dict[str, Any]:
    return SceneCsvConverter().convert(csv_path, jsonl_path, dt, t_h)
