"""
流水线任务调度：simulate → train-teacher → train-student → evaluate，
以及 cpm-solve、plot-data、convert 等辅助任务

每个任务把产物写到 out 目录，并写出不含时间戳的 manifest.json（配置快照、随机种子、
依赖版本），同一份 manifest 重跑得到逐位相同的产物。
"""
import os
import json
import logging
import platform
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from config.settings import RunConfig, Settings, config_to_dict
from models.mixture import GaussianMixture, mixture_from_json, mixture_to_json
from models.scene import Dataset
from services import metrics_service
from services.congestion_graph_service import dump_graphs
from services.cpm_service import cpm_solve
from services.gaussian_service import mc_kl, responsibilities
from services.scene_service import convert_csv, load_scenes, save_scenes, split_dataset
from services.simulator_service import generate_dataset, label_dataset
from services.student_service import StudentTrainer, constant_velocity_predict, load_student, predict, save_student
from services.teacher_service import TeacherTrainer, extract_pattern, load_teacher, save_teacher

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
DATASET_NAME = 'dataset.jsonl'


class ValidationFailure(Exception):
    """参数或输入校验失败（对应退出码1）"""


def versions() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'checkpoint': str(Settings.CHECKPOINT_VERSION),
    }


def write_json(path: str, payload: Any):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} 不是合法的JSON: {str(e)}")


def write_manifest(out_dir: str, command: str, options: Dict[str, Any], config: RunConfig,
                   artifacts: List[str]) -> str:
    path = os.path.join(out_dir, MANIFEST_NAME)
    write_json(path, {
        'command': command,
        'options': options,
        'config': config_to_dict(config),
        'seeds': {'seed': config.seed},
        'versions': versions(),
        'artifacts': sorted(artifacts),
    })
    return path


def resolve_dataset_path(data: str) -> str:
    """--data 可以是数据集目录或 JSONL 文件"""
    if os.path.isdir(data):
        return os.path.join(data, DATASET_NAME)
    return data


def load_split(data: str, config: RunConfig) -> Dataset:
    """加载数据集并按 (seed, split_ratio) 重新划分"""
    return split_dataset(load_scenes(resolve_dataset_path(data)), config.split_ratio, config.seed)


def load_mixture(path: str) -> GaussianMixture:
    return mixture_from_json(read_json(path))


class PipelineRunner:
    """按任务名分发执行，返回 {"success", "message", "artifacts", "exit_code"}"""

    def __init__(self, config: RunConfig):
        self.config = config
        self._handlers: Dict[str, Callable[[Dict[str, Any], str], List[str]]] = {
            'simulate': self._handle_simulate,
            'train-teacher': self._handle_train_teacher,
            'train-student': self._handle_train_student,
            'evaluate': self._handle_evaluate,
            'cpm-solve': self._handle_cpm_solve,
            'plot-data': self._handle_plot_data,
            'convert': self._handle_convert,
        }

    @property
    def commands(self) -> List[str]:
        return list(self._handlers)

    def run_task(self, command: str, options: Dict[str, Any]) -> Dict[str, Any]:
        out_dir = options.get('out') or Settings.DEFAULT_OUT_DIR
        if command not in self._handlers:
            return {"success": False, "message": f"未知任务: {command}", "artifacts": [], "exit_code": 1}
        try:
            logger.info(f"开始执行任务 {command}，输出目录 {out_dir}")
            os.makedirs(out_dir, exist_ok=True)
            artifacts = self._handlers[command](options, out_dir)
            manifest = write_manifest(out_dir, command, options, self.config,
                                      [os.path.basename(p) for p in artifacts])
            logger.info(f"任务 {command} 完成，产物 {len(artifacts)} 个")
            return {"success": True, "message": f"{command} 完成", "artifacts": artifacts + [manifest],
                    "exit_code": 0}
        except FloatingPointError as e:
            logger.error(f"任务 {command} 数值计算失败: {str(e)}")
            return {"success": False, "message": str(e), "artifacts": [], "exit_code": 2}
        except (ValueError, FileNotFoundError, ValidationFailure) as e:
            logger.error(f"任务 {command} 校验失败: {str(e)}")
            return {"success": False, "message": str(e), "artifacts": [], "exit_code": 1}
        except Exception as e:
            logger.error(f"任务 {command} 执行失败: {str(e)}")
            return {"success": False, "message": str(e), "artifacts": [], "exit_code": 2}

    def _handle_simulate(self, options, out_dir) -> List[str]:
        cfg = self.config
        dataset = generate_dataset(cfg)
        labels = label_dataset(dataset.scenes, cfg.d_col)
        data_path = os.path.join(out_dir, DATASET_NAME)
        labels_path = os.path.join(out_dir, 'labels.jsonl')
        save_scenes(dataset, data_path)
        with open(labels_path, 'w', encoding='utf-8') as f:
            for label in labels:
                f.write(json.dumps(label.to_json()) + '\n')
        collided = sum(1 for label in labels if label.events)
        logger.info(f"仿真完成: {len(dataset.scenes)} 个场景，其中 {collided} 个含碰撞")
        return [data_path, labels_path]

    def _handle_train_teacher(self, options, out_dir) -> List[str]:
        dataset = load_split(self._require(options, 'data'), self.config)
        trainer = TeacherTrainer(self.config)
        model = trainer.train(dataset)
        model_path = os.path.join(out_dir, 'teacher.json')
        log_path = os.path.join(out_dir, 'teacher_log.csv')
        save_teacher(model, model_path, self.config)
        pd.DataFrame({'epoch': range(1, len(trainer.elbo_history) + 1), 'elbo_loss': trainer.elbo_history}) \
            .to_csv(log_path, index=False)
        artifacts = [model_path, log_path]
        if options.get('dump_graphs'):
            graphs_path = os.path.join(out_dir, 'graphs.jsonl')
            dump_graphs(dataset.train_scenes(), graphs_path, self.config.w_max)
            artifacts.append(graphs_path)
        return artifacts

    def _handle_train_student(self, options, out_dir) -> List[str]:
        dataset = load_split(self._require(options, 'data'), self.config)
        teacher = load_teacher(self._require(options, 'teacher'))
        trainer = StudentTrainer(self.config)
        model = trainer.train(dataset, teacher)
        model_path = os.path.join(out_dir, 'student.json')
        log_path = os.path.join(out_dir, 'training_log.csv')
        save_student(model, model_path)
        pd.DataFrame(trainer.history, columns=['epoch', 'l2', 'l1', 'total']).to_csv(log_path, index=False)
        return [model_path, log_path]

    def _handle_evaluate(self, options, out_dir) -> List[str]:
        dataset = load_split(self._require(options, 'data'), self.config)
        scenes = dataset.test_scenes()
        baseline = options.get('baseline')
        artifacts = []
        reports = {}
        if options.get('model'):
            model = load_student(options['model'])
            reports['student'] = metrics_service.evaluate(lambda s: predict(model, s), scenes,
                                                          self.config.d_col, name='student')
        if baseline == 'cv' or not reports:
            reports['cv'] = metrics_service.evaluate(constant_velocity_predict, scenes,
                                                     self.config.d_col, name='cv')
        for name, report in reports.items():
            path = os.path.join(out_dir, 'report.json' if name == 'student' or len(reports) == 1
                                else f'{name}_report.json')
            metrics_service.report_to_json(report, path)
            artifacts.append(path)
        primary = reports.get('student') or reports['cv']
        artifacts.extend(metrics_service.plot_series_csv(primary, out_dir).values())
        if len(reports) > 1:
            table = metrics_service.compare(reports)
            table_path = os.path.join(out_dir, 'comparison.csv')
            table.to_csv(table_path)
            logger.info("\n" + metrics_service.format_comparison(table))
            artifacts.append(table_path)
        return artifacts

    def _handle_cpm_solve(self, options, out_dir) -> List[str]:
        p0 = load_mixture(self._require(options, 'p'))
        q = load_mixture(self._require(options, 'q'))
        p, coupling, report = cpm_solve(p0, q, self.config)
        summary = report.to_json()
        summary['coupling'] = coupling.to_json()
        samples = options.get('mc_samples')
        samples = self.config.mc_samples if samples is None else int(samples)
        if samples > 1:
            estimate, se = mc_kl(p, q, samples, np.random.default_rng([self.config.seed, 3]))
            summary['mc_kl'] = {'estimate': estimate, 'standard_error': se, 'samples': samples}
        p_path = os.path.join(out_dir, 'solved_p.json')
        report_path = os.path.join(out_dir, 'cpm_report.json')
        write_json(p_path, mixture_to_json(p))
        write_json(report_path, summary)
        return [p_path, report_path]

    def _handle_plot_data(self, options, out_dir) -> List[str]:
        teacher = load_teacher(self._require(options, 'teacher'))
        if teacher.q_mixture is None:
            raise ValueError("教师模型缺少混合模型 Q")
        dataset = load_split(self._require(options, 'data'), self.config)
        which = options.get('split') or 'test'
        scenes = {'train': dataset.train_scenes, 'test': dataset.test_scenes,
                  'all': lambda: list(dataset.scenes)}[which]()
        rows, series = [], []
        for scene in scenes:
            resp = responsibilities(teacher.q_mixture, np.array(extract_pattern(teacher, scene)))
            for frame, weights in enumerate(resp, 1):
                for component, weight in enumerate(weights):
                    rows.append({'scene_id': scene.scene_id, 'kind': scene.scenario_kind.value,
                                 'frame': frame, 'component': component, 'weight': float(weight)})
            series.append({'scene_id': scene.scene_id, 'kind': scene.scenario_kind.value,
                           'responsibilities': resp.tolist(), 'shifted': bool(responsibility_shift(resp))})
        csv_path = os.path.join(out_dir, 'responsibilities.csv')
        json_path = os.path.join(out_dir, 'mixture_weights.json')
        pd.DataFrame(rows, columns=['scene_id', 'kind', 'frame', 'component', 'weight']) \
            .to_csv(csv_path, index=False)
        write_json(json_path, {'m_q': teacher.q_mixture.n_components,
                               'lambda': teacher.q_mixture.weights.tolist(), 'scenes': series})
        return [csv_path, json_path]

    def _handle_convert(self, options, out_dir) -> List[str]:
        data_path = os.path.join(out_dir, DATASET_NAME)
        result = convert_csv(self._require(options, 'csv'), data_path, self.config.dt, self.config.t_h)
        logger.info(result['message'])
        return [data_path]

    @staticmethod
    def _require(options: Dict[str, Any], key: str) -> str:
        value = options.get(key)
        if not value:
            raise ValidationFailure(f"缺少必要参数 --{key.replace('_', '-')}")
        return value


def responsibility_shift(resp: np.ndarray, mass: float = 0.1) -> bool:
    """首末观测帧之间 argmax 分量改变，或任一分量权重变化超过 mass"""
    first, last = resp[0], resp[-1]
    return int(np.argmax(first)) != int(np.argmax(last)) or float(np.max(np.abs(first - last))) > mass


def run_pipeline_task(command: str, options: Dict[str, Any], config: RunConfig) -> Dict[str, Any]:
    return PipelineRunner(config).run_task(command, options)


def load_manifest(path: str) -> Dict[str, Any]:
    manifest = read_json(path)
    for key in ('command', 'options', 'config'):
        if key not in manifest:
            raise ValueError(f"manifest 缺少字段 {key}: {path}")
    return manifest


def rerun_options(manifest: Dict[str, Any], out: Optional[str] = None) -> Dict[str, Any]:
    options = dict(manifest['options'])
    if out:
        options['out'] = out
    return options
