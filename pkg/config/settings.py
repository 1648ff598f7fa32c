import os
import json
import dataclasses
from dataclasses import dataclass, fields
from typing import Dict, Any, Optional

from dotenv import load_dotenv, dotenv_values

load_dotenv()


class Settings:
    # 进程级配置，从环境变量读取
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # 按场景并发处理的线程数（仿真、图构建、评估）
    TASK_CONCURRENCY = int(os.getenv('TASK_CONCURRENCY', '4'))

    # CSV转换相关配置
    CSV_PROCESSING_CHUNK_SIZE = int(os.getenv('CSV_PROCESSING_CHUNK_SIZE', '50000'))

    DEFAULT_OUT_DIR = os.getenv('DEFAULT_OUT_DIR', './runs')
    CHECKPOINT_VERSION = int(os.getenv('CHECKPOINT_VERSION', '1'))


MATCH_MODES = ('distribution', 'feature', 'none')
EM_MODES = ('batch', 'stochastic')


@dataclass(frozen=True)
class RunConfig:
    """流水线全部可调参数，默认值为单机可跑的规模"""

    # 时间轴：5 Hz，观测3秒，预测5秒
    dt: float = 0.2
    t_h: int = 15
    t_p: int = 40

    # 教师模型；完整规模下潜变量维度取64
    d_z: int = 16
    m_q: int = 4
    vgae_hidden: int = 32
    teacher_lr: float = 1e-4
    teacher_epochs: int = 30
    w_max: float = 100.0
    em_mode: str = 'batch'
    em_max_iters: int = 200
    var_floor: float = 1e-6

    # 学生模型；完整规模下LSTM隐层取128
    m_p: int = 4
    enc_hidden: int = 32
    dec_hidden: int = 32
    grid_rows: int = 13
    grid_cols: int = 3
    cell_length: float = 5.0
    cell_width: float = 4.0
    conv_channels: int = 8
    pooling: bool = True
    gamma: float = 1.0
    match_mode: str = 'distribution'
    student_lr: float = 3e-3
    student_epochs: int = 20
    batch_size: int = 16
    k_inner: int = 5
    sigma_floor: float = 1e-3
    rho_limit: float = 0.99

    # CPM求解器
    cpm_max_iters: int = 200
    cpm_tol: float = 1e-6
    mc_samples: int = 100000

    # 数据与评估
    seed: int = 7
    split_ratio: float = 0.75
    d_col: float = 2.0
    noise_std: float = 0.05
    scenes_per_kind: int = 100
    agents_min: int = 2
    agents_max: int = 4

    def __post_init__(self):
        errors = []
        if self.dt <= 0:
            errors.append('dt 必须大于0')
        if not (0 < self.t_h < self.t_p):
            errors.append('必须满足 0 < t_h < t_p')
        for name in ('d_z', 'm_q', 'm_p', 'vgae_hidden', 'enc_hidden', 'dec_hidden',
                     'grid_rows', 'grid_cols', 'conv_channels', 'batch_size',
                     'em_max_iters', 'cpm_max_iters', 'mc_samples'):
            if getattr(self, name) < 1:
                errors.append(f'{name} 必须 ≥ 1')
        if self.grid_rows < 3 or self.grid_cols < 3:
            errors.append('池化网格至少为 3×3')
        for name in ('teacher_epochs', 'student_epochs', 'k_inner', 'scenes_per_kind'):
            if getattr(self, name) < 0:
                errors.append(f'{name} 不能为负数')
        for name in ('teacher_lr', 'student_lr', 'cell_length', 'cell_width', 'd_col',
                     'w_max', 'var_floor', 'sigma_floor', 'cpm_tol'):
            if getattr(self, name) <= 0:
                errors.append(f'{name} 必须大于0')
        if self.var_floor < 1e-6:
            errors.append('var_floor 不能小于 1e-6')
        if self.gamma < 0:
            errors.append('gamma 不能为负数')
        if self.noise_std < 0:
            errors.append('noise_std 不能为负数')
        if not (0 < self.split_ratio < 1):
            errors.append('split_ratio 必须在 (0, 1) 内')
        if not (0 < self.rho_limit < 1):
            errors.append('rho_limit 必须在 (0, 1) 内')
        if self.match_mode not in MATCH_MODES:
            errors.append(f'match_mode 必须是 {MATCH_MODES} 之一')
        if self.em_mode not in EM_MODES:
            errors.append(f'em_mode 必须是 {EM_MODES} 之一')
        if not (1 <= self.agents_min <= self.agents_max):
            errors.append('必须满足 1 ≤ agents_min ≤ agents_max')
        if errors:
            raise ValueError('配置校验失败: ' + '; '.join(errors))

    @property
    def horizon(self) -> int:
        """预测步数 T_p - T_h"""
        return self.t_p - self.t_h

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: Any, target: type) -> Any:
    """把配置文件中的字符串值转换为字段声明的类型"""
    if isinstance(raw, target) and not (target is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if target is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"配置项 {name} 的值无法解析为 {target.__name__}: {raw!r}")


def _field_types() -> Dict[str, type]:
    hints = {'float': float, 'int': int, 'str': str, 'bool': bool}
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(RunConfig)}


def build_run_config(values: Dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """根据键值对构建配置，未知键直接拒绝"""
    types = _field_types()
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ValueError(f"未知配置项: {unknown}")
    coerced = {k: _coerce(k, v, types[k]) for k, v in values.items()}
    return dataclasses.replace(base or RunConfig(), **coerced)


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    加载运行配置

    Args:
        path: key=value 配置文件，或运行清单 manifest.json（取其中的 config 字段）
        overrides: 命令行 --set 覆盖项

    Returns:
        校验后的 RunConfig
    """
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"配置文件不存在: {path}")
        if path.lower().endswith('.json'):
            with open(path, 'r', encoding='utf-8') as f:
                payload = json.load(f)
            values.update(payload.get('config', payload))
        else:
            values.update({k: v for k, v in dotenv_values(path).items() if v is not None})
    if overrides:
        values.update(overrides)
    return build_run_config(values)


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    return dataclasses.asdict(config)


def parse_overrides(items) -> Dict[str, str]:
    """解析命令行中的 key=value 覆盖项"""
    result = {}
    for item in items or []:
        if '=' not in item:
            raise ValueError(f"覆盖项格式应为 key=value: {item}")
        key, value = item.split('=', 1)
        result[key.strip()] = value.strip()
    return result
