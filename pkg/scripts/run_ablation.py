"""
消融实验脚本：匹配方式（分布 / 特征 / 无）、社会池化开关、混合分量数 M_P 与 M_Q，
每组设置跑多个随机种子，并以 gamma=0（不做匹配）为基线输出对比表

用法:
    python -m scripts.run_ablation --out runs/ablation [--config run.env] [--seeds 7 8 9] [--set k=v ...]
"""
import os
import sys
import argparse
import logging
from typing import Dict, List, Tuple

import pandas as pd

from config.settings import RunConfig, Settings, load_run_config, parse_overrides
from services.metrics_service import compare, format_comparison, load_report
from scheduler.task_runner import run_pipeline_task

logger = logging.getLogger(__name__)

BASELINE = 'no-matching'

# 名称 → (教师配置覆盖, 学生配置覆盖)
SETTINGS: Dict[str, Tuple[Dict, Dict]] = {
    BASELINE: ({}, {'gamma': 0.0}),
    'distribution': ({}, {'match_mode': 'distribution'}),
    'feature': ({}, {'match_mode': 'feature'}),
    'no-pooling': ({}, {'gamma': 0.0, 'pooling': False}),
    'm_p=2': ({}, {'m_p': 2}),
    'm_p=8': ({}, {'m_p': 8}),
    'm_q=2': ({'m_q': 2}, {}),
    'm_q=8': ({'m_q': 8}, {}),
}


def _step(command: str, options: Dict, config: RunConfig) -> str:
    result = run_pipeline_task(command, options, config)
    if not result['success']:
        raise RuntimeError(f"{command} 失败: {result['message']}")
    return options['out']


def run_seed(base: RunConfig, seed: int, out: str, names: List[str]) -> pd.DataFrame:
    """单个种子：仿真一次，按 M_Q 训练教师，逐个设置训练并评估学生"""
    config = base.replace(seed=seed)
    root = os.path.join(out, f'seed-{seed}')
    data = _step('simulate', {'out': os.path.join(root, 'data')}, config)

    teachers: Dict[int, str] = {}
    reports = {}
    for name in names:
        teacher_changes, student_changes = SETTINGS[name]
        teacher_cfg = config.replace(**teacher_changes)
        if teacher_cfg.m_q not in teachers:
            teacher_dir = _step('train-teacher', {'out': os.path.join(root, f'teacher-mq{teacher_cfg.m_q}'),
                                                  'data': data}, teacher_cfg)
            teachers[teacher_cfg.m_q] = os.path.join(teacher_dir, 'teacher.json')
        student_cfg = teacher_cfg.replace(**student_changes)
        run_dir = os.path.join(root, name.replace('=', ''))
        _step('train-student', {'out': run_dir, 'data': data, 'teacher': teachers[teacher_cfg.m_q]}, student_cfg)
        _step('evaluate', {'out': os.path.join(run_dir, 'eval'), 'data': data,
                           'model': os.path.join(run_dir, 'student.json')}, student_cfg)
        reports[name] = load_report(os.path.join(run_dir, 'eval', 'report.json'))
        logger.info(f"[seed {seed}] {name} 完成: 碰撞率 {reports[name].collision_rate:.2f}%")
    return compare(reports, baseline=BASELINE)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='消融实验')
    parser.add_argument('--out', default=os.path.join(Settings.DEFAULT_OUT_DIR, 'ablation'))
    parser.add_argument('--config')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE')
    parser.add_argument('--seeds', type=int, nargs='+', default=[7, 8, 9])
    parser.add_argument('--only', nargs='+', choices=list(SETTINGS), help='只跑部分设置（基线总会包含）')
    args = parser.parse_args(argv)

    try:
        base = load_run_config(args.config, parse_overrides(args.set))
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"配置加载失败: {str(e)}")
        return 1

    names = [BASELINE] + [n for n in (args.only or SETTINGS) if n != BASELINE]
    tables = {}
    for seed in args.seeds:
        try:
            tables[seed] = run_seed(base, seed, args.out, names)
        except Exception as e:
            logger.error(f"种子 {seed} 的消融实验失败: {str(e)}")
            return 2

    stacked = pd.concat(tables, names=['seed', 'metric'])
    mean = stacked.groupby(level='metric', sort=False).mean()
    os.makedirs(args.out, exist_ok=True)
    stacked.to_csv(os.path.join(args.out, 'ablation_by_seed.csv'))
    mean.to_csv(os.path.join(args.out, 'ablation_mean.csv'))
    logger.info("各种子平均:\n" + format_comparison(mean))
    return 0


if __name__ == "__main__":
    logging.basicConfig(level=Settings.LOG_LEVEL)
    sys.exit(main())
