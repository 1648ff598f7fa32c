import os
import json
import logging
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from models.report import EvalReport
from models.scene import Scene
from scheduler.pool import map_scenes
from services.simulator_service import collision_events

logger = logging.getLogger(__name__)

HORIZONS_S = (1, 2, 3, 4, 5)


def _prediction_for(predictions: Mapping[str, np.ndarray], scene: Scene) -> np.ndarray:
    if scene.scene_id not in predictions:
        raise ValueError(f"缺少场景 {scene.scene_id} 的预测结果")
    pred = np.asarray(predictions[scene.scene_id], dtype=np.float64)
    expected = (scene.n, scene.t_p - scene.t_h, 2)
    if pred.shape != expected:
        raise ValueError(f"场景 {scene.scene_id} 的预测形状 {pred.shape} 与 {expected} 不一致")
    return pred


def predicted_flags(prediction: np.ndarray, scene: Scene, d_col: float) -> tuple:
    """真实观测 + 预测未来拼接后，只统计预测帧内的碰撞"""
    full = np.concatenate([scene.history(), prediction], axis=1)
    _, flags = collision_events(full, d_col, first_frame=scene.t_h + 1)
    return flags


def collision_rate(predictions: Mapping[str, np.ndarray], scenes: Sequence[Scene], d_col: float) -> float:
    """碰撞率 = 100 · 被标记轨迹数 / 轨迹总数"""
    flagged = total = 0
    for scene in scenes:
        flags = predicted_flags(_prediction_for(predictions, scene), scene, d_col)
        flagged += sum(flags)
        total += len(flags)
    return 100.0 * flagged / total if total else 0.0


def horizon_step(scene: Scene, horizon_s: float) -> int:
    steps = horizon_s / scene.dt
    k = int(round(steps))
    if abs(steps - k) > 1e-9 or not (1 <= k <= scene.t_p - scene.t_h):
        raise ValueError(f"时域 {horizon_s}s 不是场景 {scene.scene_id} 预测窗口内 dt 的整数倍")
    return k


def rmse_by_horizon(predictions: Mapping[str, np.ndarray], scenes: Sequence[Scene],
                    horizons_s: Iterable[float] = HORIZONS_S) -> Dict[str, float]:
    """各时域上所有智能体欧氏误差平方均值的平方根"""
    result = {}
    for h in horizons_s:
        squared: List[float] = []
        for scene in scenes:
            k = horizon_step(scene, h)
            pred = _prediction_for(predictions, scene)
            diff = pred[:, k - 1, :] - scene.future()[:, k - 1, :]
            squared.extend(np.sum(diff * diff, axis=1).tolist())
        result[f"{h:g}s"] = float(np.sqrt(np.mean(squared))) if squared else 0.0
    return result


def available_horizons(scenes: Sequence[Scene]) -> List[int]:
    """所有场景预测窗口都能覆盖的整数秒时域"""
    return [h for h in HORIZONS_S
            if all(abs(h / s.dt - round(h / s.dt)) < 1e-9 and round(h / s.dt) <= s.t_p - s.t_h for s in scenes)]


def build_report(name: str, predictions: Mapping[str, np.ndarray], scenes: Sequence[Scene],
                 d_col: float) -> EvalReport:
    scenes = list(scenes)
    horizons = available_horizons(scenes)
    per_scenario = {}
    for kind in sorted({s.scenario_kind.value for s in scenes}):
        subset = [s for s in scenes if s.scenario_kind.value == kind]
        per_scenario[kind] = {
            'collision_rate': collision_rate(predictions, subset, d_col),
            'rmse_by_horizon': rmse_by_horizon(predictions, subset, horizons),
            'scenes': len(subset),
            'trajectories': sum(s.n for s in subset),
        }
    return EvalReport(
        name=name,
        collision_rate=collision_rate(predictions, scenes, d_col),
        rmse_by_horizon=rmse_by_horizon(predictions, scenes, horizons),
        scene_count=len(scenes),
        trajectory_count=sum(s.n for s in scenes),
        per_scenario=per_scenario,
    )


def evaluate(predict_fn: Callable[[Scene], np.ndarray], scenes: Sequence[Scene], d_col: float,
             name: str = 'model') -> EvalReport:
    """
    对测试场景逐个预测并计算指标

    Args:
        predict_fn: 场景 → (n, T_p - T_h, 2) 预测位置，需线程安全
        scenes: 测试场景
        d_col: 碰撞距离阈值
        name: 报告名称

    Returns:
        EvalReport
    """
    scenes = list(scenes)
    outputs = map_scenes(predict_fn, scenes)
    predictions = {scene.scene_id: pred for scene, pred in zip(scenes, outputs)}
    report = build_report(name, predictions, scenes, d_col)
    logger.info(f"评估完成 [{name}]: 场景 {report.scene_count} 个, 碰撞率 {report.collision_rate:.2f}%, "
                f"RMSE {report.rmse_by_horizon}")
    return report


def _metric_rows(report: EvalReport) -> Dict[str, float]:
    rows = {'collision_rate': report.collision_rate}
    rows.update({f"rmse_{k}": v for k, v in report.rmse_by_horizon.items()})
    return rows


def compare(reports: Mapping[str, EvalReport], baseline: Optional[str] = None) -> pd.DataFrame:
    """
    多个报告并排对比，相对第一个（或指定的）基线报告给出相对变化（%）

    Returns:
        行为指标、列为各报告取值及 "<名称> Δ%" 的 DataFrame
    """
    if len(reports) < 2:
        raise ValueError("至少需要两个报告才能对比")
    names = list(reports)
    baseline = names[0] if baseline is None else baseline
    if baseline not in reports:
        raise ValueError(f"基线报告不存在: {baseline}")
    table = pd.DataFrame({name: pd.Series(_metric_rows(reports[name])) for name in names})
    base = table[baseline]
    for name in names:
        if name == baseline:
            continue
        delta = table[name] - base
        table[f"{name} Δ%"] = np.where(base != 0, 100.0 * delta / base.abs().where(base != 0, 1.0),
                                       np.where(delta == 0, 0.0, np.nan))
    return table


def format_comparison(table: pd.DataFrame) -> str:
    return table.to_string(float_format=lambda v: f"{v:.4f}")


def report_to_json(report: EvalReport, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_json(), f, ensure_ascii=False, indent=2, sort_keys=True)


def load_report(path: str) -> EvalReport:
    if not os.path.exists(path):
        raise FileNotFoundError(f"评估报告不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return EvalReport.from_json(json.load(f))


def plot_series_csv(report: EvalReport, out_dir: str) -> Dict[str, str]:
    """写出 (horizon, rmse) 与 (scenario, collision_rate) 两个 CSV，供外部绘图"""
    os.makedirs(out_dir, exist_ok=True)
    rmse_path = os.path.join(out_dir, 'rmse_by_horizon.csv')
    collision_path = os.path.join(out_dir, 'collision_by_scenario.csv')
    pd.DataFrame({'horizon': list(report.rmse_by_horizon), 'rmse': list(report.rmse_by_horizon.values())}) \
        .to_csv(rmse_path, index=False)
    pd.DataFrame({
        'scenario': list(report.per_scenario),
        'collision_rate': [v['collision_rate'] for v in report.per_scenario.values()],
    }).to_csv(collision_path, index=False)
    return {'rmse': rmse_path, 'collision': collision_path}
