"""
学生模型：编码器 - 社交池化 - 解码器轨迹预测网络，附带输出混合模型 P(o) 的 CPM 头

- 编码器：共享 LSTM 按智能体展开，输入为逐帧位移
- 社交池化：把邻居的隐状态散布到以自车为中心的 13×3 网格（5 m × 4 m），
  落在同一格的状态求和，再做 3×3 valid 卷积；散布和卷积都写成常量矩阵乘法
- 解码器：LSTM 递归展开 T_p - T_h 步，每步输出二维高斯 (μx, μy, σx, σy, ρ)，
  均值位移作为下一步输入
- CPM 头：场景特征经仿射投影到教师潜空间，再输出 M_P 个对角高斯分量

训练目标为 L2 + γ·L1。每个 batch 先固定网络输出做 k_inner 次 α/β 闭式更新，
再把 α、β 当作常量对网络做一次 Adam 更新。
"""
import logging
import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from config.settings import RunConfig, build_run_config, config_to_dict
from models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from models.coupling import VariationalCoupling
from models.mixture import GaussianMixture
from models.scene import Dataset, Scene
from scheduler.pool import map_scenes
from services import diffcore as dc
from services.cpm_service import init_coupling, refine_coupling
from services.teacher_service import TeacherModel, extract_pattern

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
# 位移按 10 m/s 对应的单步位移缩放后送入网络
SPEED_SCALE = 10.0
KERNEL = 3


@dataclass
class StudentParams:
    enc_wx: dc.Tensor
    enc_wh: dc.Tensor
    enc_b: dc.Tensor
    conv_w: dc.Tensor
    conv_b: dc.Tensor
    dec_wx: dc.Tensor
    dec_wh: dc.Tensor
    dec_b: dc.Tensor
    out_w: dc.Tensor
    out_b: dc.Tensor
    proj_w: dc.Tensor
    proj_b: dc.Tensor
    logit_w: dc.Tensor
    logit_b: dc.Tensor
    mean_w: dc.Tensor
    mean_b: dc.Tensor
    var_w: dc.Tensor
    var_b: dc.Tensor

    def tensors(self) -> List[dc.Tensor]:
        return [getattr(self, f.name) for f in dataclasses.fields(self)]

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name).numpy() for f in dataclasses.fields(self)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'StudentParams':
        missing = [f.name for f in dataclasses.fields(cls) if f.name not in arrays]
        if missing:
            raise ValueError(f"学生模型权重缺失: {missing}")
        return cls(**{f.name: dc.Parameter(arrays[f.name], name=f.name) for f in dataclasses.fields(cls)})

    @property
    def d_z(self) -> int:
        return self.proj_w.shape[1]

    @property
    def m_p(self) -> int:
        return self.logit_w.shape[1]


@dataclass
class StudentModel:
    params: StudentParams
    config: RunConfig

    def __post_init__(self):
        if self.params.d_z != self.config.d_z:
            raise ValueError(f"学生模型潜空间维度 {self.params.d_z} 与配置 d_z={self.config.d_z} 不一致")


@dataclass
class PredictionOutput:
    """
    逐步二维高斯参数，均为相对最后观测位置的偏移

    offsets / sigmas 为 (n, 2) 张量列表，rhos 为 (n, 1) 张量列表，长度 T_p - T_h。
    """

    origin: np.ndarray
    offsets: List[dc.Tensor]
    sigmas: List[dc.Tensor]
    rhos: List[dc.Tensor]

    @property
    def steps(self) -> int:
        return len(self.offsets)

    def means(self) -> np.ndarray:
        return np.stack([t.data for t in self.offsets], axis=1)

    def sigma_array(self) -> np.ndarray:
        return np.stack([t.data for t in self.sigmas], axis=1)

    def rho_array(self) -> np.ndarray:
        return np.stack([t.data[:, 0] for t in self.rhos], axis=1)

    def positions(self) -> np.ndarray:
        """MAP 解码的绝对位置 (n, T_p - T_h, 2)"""
        return self.origin[:, None, :] + self.means()


@dataclass
class CpmHeadOutput:
    weights: dc.Tensor
    means: dc.Tensor
    vars: dc.Tensor
    projected: dc.Tensor

    def to_mixture(self, floor: float = 1e-6) -> GaussianMixture:
        return GaussianMixture.from_arrays(self.weights.data[0], self.means.data, self.vars.data, floor=floor)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def social_feature_dim(config: RunConfig) -> int:
    return (config.grid_rows - KERNEL + 1) * (config.grid_cols - KERNEL + 1) * config.conv_channels


def init_student(config: RunConfig, d_z: int, rng: np.random.Generator) -> StudentParams:
    """按配置初始化全部参数；LSTM 遗忘门偏置为1，输出层权重取小值使初始预测接近匀速外推"""
    he, hd, k, m = config.enc_hidden, config.dec_hidden, config.conv_channels, config.m_p
    feat = social_feature_dim(config)
    dec_in = 2 + he + feat

    def lstm_bias(hidden):
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        return b

    arrays = {
        'enc_wx': _uniform(rng, 2, (2, 4 * he)),
        'enc_wh': _uniform(rng, he, (he, 4 * he)),
        'enc_b': lstm_bias(he),
        'conv_w': _uniform(rng, KERNEL * KERNEL * he, (KERNEL * KERNEL * he, k)),
        'conv_b': np.zeros(k),
        'dec_wx': _uniform(rng, dec_in, (dec_in, 4 * hd)),
        'dec_wh': _uniform(rng, hd, (hd, 4 * hd)),
        'dec_b': lstm_bias(hd),
        'out_w': 0.1 * _uniform(rng, hd, (hd, 5)),
        'out_b': np.zeros(5),
        'proj_w': _uniform(rng, feat, (feat, d_z)),
        'proj_b': np.zeros(d_z),
        'logit_w': _uniform(rng, d_z, (d_z, m)),
        'logit_b': np.zeros(m),
        'mean_w': _uniform(rng, d_z, (d_z, m * d_z)),
        'mean_b': rng.standard_normal(m * d_z),
        'var_w': _uniform(rng, d_z, (d_z, m * d_z)),
        'var_b': np.zeros(m * d_z),
    }
    return StudentParams.from_arrays(arrays)


def _lstm_step(x: dc.Tensor, h: dc.Tensor, c: dc.Tensor, wx: dc.Tensor, wh: dc.Tensor, b: dc.Tensor,
               hidden: int) -> Tuple[dc.Tensor, dc.Tensor]:
    gates = dc.bias_add(x @ wx + h @ wh, b)
    i = dc.sigmoid(dc.slice_axis(gates, 0, hidden))
    f = dc.sigmoid(dc.slice_axis(gates, hidden, 2 * hidden))
    g = dc.tanh(dc.slice_axis(gates, 2 * hidden, 3 * hidden))
    o = dc.sigmoid(dc.slice_axis(gates, 3 * hidden, 4 * hidden))
    c = f * c + i * g
    return o * dc.tanh(c), c


def _motion_scale(scene: Scene) -> float:
    return scene.dt * SPEED_SCALE


def history_displacements(scene: Scene) -> np.ndarray:
    """观测窗口内的逐帧位移 (n, T_h - 1, 2)"""
    history = scene.history()
    return history[:, 1:, :] - history[:, :-1, :]


def encode_history(params: StudentParams, scene: Scene) -> dc.Tensor:
    """共享 LSTM 编码每个智能体的观测位移序列，返回 (n, enc_hidden)"""
    hidden = params.enc_wh.shape[0]
    disp = history_displacements(scene) / _motion_scale(scene)
    h = dc.constant(np.zeros((scene.n, hidden)))
    c = dc.constant(np.zeros((scene.n, hidden)))
    for step in range(disp.shape[1]):
        h, c = _lstm_step(dc.constant(disp[:, step, :]), h, c,
                          params.enc_wx, params.enc_wh, params.enc_b, hidden)
    return h


def grid_cell(offset: np.ndarray, config: RunConfig) -> Optional[Tuple[int, int]]:
    """邻居相对自车的偏移 → 网格 (行, 列)；行沿 x 方向，列沿 y 方向，超出网格返回 None"""
    row = int(np.floor(offset[0] / config.cell_length + config.grid_rows / 2.0))
    col = int(np.floor(offset[1] / config.cell_width + config.grid_cols / 2.0))
    if 0 <= row < config.grid_rows and 0 <= col < config.grid_cols:
        return row, col
    return None


def pooling_matrices(positions: np.ndarray, config: RunConfig) -> List[np.ndarray]:
    """
    散布 + im2col 的常量矩阵

    对每个卷积核偏移 (dr, dc) 返回形状 (n·P_out, n) 的矩阵 M，
    使得 M @ H 的第 a·P_out + p 行等于自车 a 的网格在输出位置 p 处、
    该核偏移对应格子里的隐状态之和。
    """
    n = positions.shape[0]
    rows, cols = config.grid_rows, config.grid_cols
    out_rows, out_cols = rows - KERNEL + 1, cols - KERNEL + 1
    p_out = out_rows * out_cols
    scatter = np.zeros((n, rows, cols, n))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            cell = grid_cell(positions[b] - positions[a], config)
            if cell is not None:
                scatter[a, cell[0], cell[1], b] += 1.0

    matrices = []
    for dr in range(KERNEL):
        for dcol in range(KERNEL):
            m = np.zeros((n * p_out, n))
            for a in range(n):
                for r in range(out_rows):
                    for c in range(out_cols):
                        m[a * p_out + r * out_cols + c] = scatter[a, r + dr, c + dcol]
            matrices.append(m)
    return matrices


def social_pool(params: StudentParams, hidden_states: dc.Tensor, positions_at_t_h: np.ndarray,
                config: RunConfig) -> Tuple[dc.Tensor, dc.Tensor]:
    """
    Returns:
        (每个智能体的社交张量 (n, F), 场景社交特征 (1, F))
    """
    n = hidden_states.shape[0]
    feat = social_feature_dim(config)
    if not config.pooling:
        social = dc.constant(np.zeros((n, feat)))
        return social, dc.constant(np.zeros((1, feat)))
    matrices = pooling_matrices(np.asarray(positions_at_t_h, dtype=np.float64), config)
    patches = dc.concat([dc.constant(m) @ hidden_states for m in matrices], axis=1)
    conv = dc.relu(dc.bias_add(patches @ params.conv_w, params.conv_b))
    social = dc.reshape(conv, (n, feat))
    scene_feature = dc.reshape(dc.mean(social, axis=0), (1, feat))
    return social, scene_feature


def cpm_head(params: StudentParams, scene_feature: dc.Tensor, var_floor: float = 1e-6) -> CpmHeadOutput:
    """场景特征 → 教师潜空间中的 M_P 分量对角高斯混合"""
    m, d_z = params.m_p, params.d_z
    projected = dc.bias_add(scene_feature @ params.proj_w, params.proj_b)
    weights = dc.softmax(dc.bias_add(projected @ params.logit_w, params.logit_b))
    means = dc.reshape(dc.bias_add(projected @ params.mean_w, params.mean_b), (m, d_z))
    raw_var = dc.bias_add(projected @ params.var_w, params.var_b)
    variances = dc.reshape(dc.shift(dc.softplus(raw_var), var_floor), (m, d_z))
    return CpmHeadOutput(weights=weights, means=means, vars=variances, projected=projected)


def decode_future(params: StudentParams, hidden: dc.Tensor, social_tensor: dc.Tensor, scene: Scene,
                  config: RunConfig) -> PredictionOutput:
    """
    递归解码 T_p - T_h 步

    每步的均值位移 = 上一步位移 + 网络输出的修正量，首步以最后一个观测位移为基准。
    """
    n = scene.n
    hd = params.dec_wh.shape[0]
    scale = _motion_scale(scene)
    history = scene.history()
    origin = history[:, -1, :].copy()
    last_disp = history[:, -1, :] - history[:, -2, :] if scene.t_h >= 2 else np.zeros((n, 2))

    context = dc.concat([hidden, social_tensor], axis=1)
    h = dc.constant(np.zeros((n, hd)))
    c = dc.constant(np.zeros((n, hd)))
    prev_disp = dc.constant(last_disp)
    offset = dc.constant(np.zeros((n, 2)))
    offsets, sigmas, rhos = [], [], []
    for _ in range(scene.t_p - scene.t_h):
        step_input = dc.concat([dc.scale(prev_disp, 1.0 / scale), context], axis=1)
        h, c = _lstm_step(step_input, h, c, params.dec_wx, params.dec_wh, params.dec_b, hd)
        out = dc.bias_add(h @ params.out_w, params.out_b)
        disp = prev_disp + dc.scale(dc.slice_axis(out, 0, 2), scale)
        offset = offset + disp
        offsets.append(offset)
        sigmas.append(dc.shift(dc.softplus(dc.slice_axis(out, 2, 4)), config.sigma_floor))
        rhos.append(dc.scale(dc.tanh(dc.slice_axis(out, 4, 5)), config.rho_limit))
        prev_disp = disp
    return PredictionOutput(origin=origin, offsets=offsets, sigmas=sigmas, rhos=rhos)


def bivariate_nll(target: np.ndarray, mean: dc.Tensor, sigma: dc.Tensor, rho: dc.Tensor) -> dc.Tensor:
    """
    逐智能体的二维高斯负对数密度 (n, 1)

    log 2π + log σx + log σy + ½ log(1-ρ²) + z / (2(1-ρ²))，
    z = dx² + dy² - 2ρ·dx·dy，dx、dy 为标准化残差
    """
    n = target.shape[0]
    standardized = (dc.constant(target) - mean) / sigma
    dx = dc.slice_axis(standardized, 0, 1)
    dy = dc.slice_axis(standardized, 1, 2)
    one_minus = dc.shift(dc.neg(dc.square(rho)), 1.0)
    z = dc.square(dx) + dc.square(dy) - dc.scale(rho * dx * dy, 2.0)
    log_sigma = dc.reshape(dc.sum(dc.log(sigma), axis=1), (n, 1))
    return dc.shift(log_sigma + dc.scale(dc.log(one_minus), 0.5) + z / dc.scale(one_minus, 2.0), LOG_2PI)


def nll_loss_L2(pred: PredictionOutput, scene: Scene) -> dc.Tensor:
    """L2 = 各智能体逐步负对数密度之和，再对智能体取平均"""
    if pred.steps != scene.t_p - scene.t_h:
        raise ValueError(f"预测步数 {pred.steps} 与场景预测窗口 {scene.t_p - scene.t_h} 不一致")
    targets = scene.future() - pred.origin[:, None, :]
    per_step = [bivariate_nll(targets[:, k, :], pred.offsets[k], pred.sigmas[k], pred.rhos[k])
                for k in range(pred.steps)]
    return dc.scale(dc.sum(dc.concat(per_step, axis=1)), 1.0 / scene.n)


def forward_scene(params: StudentParams, scene: Scene, config: RunConfig,
                  with_head: bool = True) -> Tuple[PredictionOutput, Optional[CpmHeadOutput]]:
    hidden = encode_history(params, scene)
    social, scene_feature = social_pool(params, hidden, scene.history()[:, -1, :], config)
    pred = decode_future(params, hidden, social, scene, config)
    head = cpm_head(params, scene_feature, config.var_floor) if with_head else None
    return pred, head


def batch_mixture(heads: Sequence[CpmHeadOutput]) -> CpmHeadOutput:
    """batch 内各场景 CPM 头输出的逐元素平均"""
    if not heads:
        raise ValueError("batch 为空")
    factor = 1.0 / len(heads)

    def average(attr):
        total = getattr(heads[0], attr)
        for head in heads[1:]:
            total = total + getattr(head, attr)
        return dc.scale(total, factor)

    return CpmHeadOutput(weights=average('weights'), means=average('means'),
                         vars=average('vars'), projected=average('projected'))


def _conditional_coupling(coupling: VariationalCoupling) -> Tuple[np.ndarray, np.ndarray]:
    """
    把 α 拆成 ω_j·r_ij，r_ij = α_ij/ω_j 为给定 p_j 时的条件分布

    Returns:
        (r, c)，c_j = Σ_i r_ij·(log r_ij - log β_ij)，r_ij = 0 的项记为0
    """
    log_omega = logsumexp(coupling.log_alpha, axis=0, keepdims=True)
    with np.errstate(invalid='ignore'):
        log_r = np.where(np.isfinite(log_omega), coupling.log_alpha - log_omega, -np.inf)
        r = np.exp(log_r)
        per_entry = np.where(r > 0, r * (log_r - coupling.log_beta), 0.0)
    return r, per_entry.sum(axis=0)


def distribution_match_term(head: CpmHeadOutput, q: GaussianMixture, coupling: VariationalCoupling) -> dc.Tensor:
    """
    固定 r = α/ω 与 β 时的 L1 = Σ_ij α_ij·KL(p_j‖q_i) + KL(α‖β)，其中 α_ij = ω_j·r_ij

    梯度经过 p_j 的均值、方差与混合权重 ω。
    """
    m = head.means.shape[0]
    if head.means.shape[1] != q.dim:
        raise ValueError(f"学生混合维度 {head.means.shape[1]} 与教师混合维度 {q.dim} 不一致")
    if coupling.shape != (q.n_components, m):
        raise ValueError(f"耦合形状 {coupling.shape} 与 (M_Q, M_P)=({q.n_components}, {m}) 不一致")
    log_var = dc.log(head.vars)
    terms = []
    for i, comp in enumerate(q.components):
        q_mean = np.tile(comp.mean, (m, 1))
        q_var = np.tile(comp.var, (m, 1))
        diff = head.means - dc.constant(q_mean)
        per_dim = (dc.constant(np.log(q_var)) - log_var) + (head.vars + dc.square(diff)) / dc.constant(q_var)
        kl = dc.scale(dc.shift(dc.sum(per_dim, axis=1), -float(q.dim)), 0.5)
        terms.append(dc.reshape(kl, (1, m)))
    kl_table = dc.concat(terms, axis=0)
    r, conditional_kl = _conditional_coupling(coupling)
    alpha = dc.constant(np.ones((q.n_components, 1))) @ head.weights * dc.constant(r)
    # Σ_ij α_ij log(α_ij/β_ij) = Σ_j ω_j·(log ω_j + c_j)
    coupling_kl = dc.sum(head.weights * (dc.log(head.weights) + dc.constant(conditional_kl.reshape(1, m))))
    return dc.sum(kl_table * alpha) + coupling_kl


def feature_match_term(heads: Sequence[CpmHeadOutput], targets: Sequence[np.ndarray]) -> dc.Tensor:
    """投影后的场景特征与教师平均潜变量的平方距离，对 batch 取平均"""
    losses = [dc.sum(dc.square(head.projected - dc.constant(np.asarray(target).reshape(1, -1))))
              for head, target in zip(heads, targets)]
    return dc.scale(dc.sum(dc.concat([dc.reshape(loss, (1,)) for loss in losses], axis=0)), 1.0 / len(losses))


def student_loss(params: StudentParams, scenes: Sequence[Scene], config: RunConfig,
                 q: Optional[GaussianMixture] = None, coupling: Optional[VariationalCoupling] = None,
                 feature_targets: Optional[Sequence[np.ndarray]] = None,
                 k_inner: Optional[int] = None) -> Tuple[dc.Tensor, dc.Tensor, Optional[dc.Tensor], Optional[VariationalCoupling]]:
    """
    一个 batch 的联合损失 L2 + γ·L1

    distribution 模式下先用当前网络输出的 batch 平均混合 P 细化耦合（k_inner 次 α/β 更新），
    再固定 r = α/ω 与 β 参与反向传播（ω 仍可求导）。γ = 0 或 match_mode = none 时完全不计算 CPM 头。

    Returns:
        (总损失, L2, L1 或 None, 更新后的耦合或 None)
    """
    use_head = config.gamma > 0 and config.match_mode != 'none'
    l2_terms, heads = [], []
    for scene in scenes:
        pred, head = forward_scene(params, scene, config, with_head=use_head)
        l2_terms.append(dc.reshape(nll_loss_L2(pred, scene), (1,)))
        heads.append(head)
    l2 = dc.mean(dc.concat(l2_terms, axis=0))
    if not use_head:
        return l2, l2, None, coupling

    if config.match_mode == 'feature':
        if feature_targets is None:
            raise ValueError("feature 匹配模式需要教师潜变量目标")
        l1 = feature_match_term(heads, feature_targets)
    else:
        if q is None:
            raise ValueError("distribution 匹配模式需要教师混合模型 Q")
        averaged = batch_mixture(heads)
        p = averaged.to_mixture(config.var_floor)
        steps = config.k_inner if k_inner is None else k_inner
        if coupling is None or coupling.shape != (q.n_components, p.n_components):
            coupling = init_coupling(p, q)
        # 只沿用上一 batch 的 β，α 由本 batch 的 ω 重新计算
        warm = VariationalCoupling.from_log(coupling.log_beta, coupling.log_beta)
        coupling = refine_coupling(p, q, warm, steps) if steps > 0 else init_coupling(p, q)
        l1 = distribution_match_term(averaged, q, coupling)
    total = l2 + dc.scale(l1, config.gamma)
    return total, l2, l1, coupling


class StudentTrainer:
    """联合训练学生模型，history 记录每轮的 (epoch, l2, l1, total)"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.history: List[Dict[str, float]] = []

    def _feature_targets(self, teacher: TeacherModel, scenes: List[Scene]) -> Dict[str, np.ndarray]:
        patterns = map_scenes(lambda scene: extract_pattern(teacher, scene), scenes)
        return {scene.scene_id: np.mean(z, axis=0) for scene, z in zip(scenes, patterns)}

    def train(self, dataset: Dataset, teacher: TeacherModel) -> StudentModel:
        cfg = self.config
        if teacher.d_z != cfg.d_z:
            raise ValueError(f"教师潜空间维度 {teacher.d_z} 与学生配置 d_z={cfg.d_z} 不一致")
        scenes = dataset.train_scenes()
        if not scenes:
            raise ValueError("训练集为空，无法训练学生模型")
        matching = cfg.gamma > 0 and cfg.match_mode != 'none'
        if matching and cfg.match_mode == 'distribution' and teacher.q_mixture is None:
            raise ValueError("教师模型缺少混合模型 Q")

        rng = np.random.default_rng([cfg.seed, 2])
        params = init_student(cfg, teacher.d_z, rng)
        optimizer = dc.Adam(params.tensors(), lr=cfg.student_lr)
        targets = self._feature_targets(teacher, scenes) if matching and cfg.match_mode == 'feature' else {}
        coupling = None
        self.history = []

        for epoch in range(1, cfg.student_epochs + 1):
            order = rng.permutation(len(scenes))
            sums = {'l2': 0.0, 'l1': 0.0, 'total': 0.0}
            batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [scenes[i] for i in order[start:start + cfg.batch_size]]
                total, l2, l1, coupling = student_loss(
                    params, batch, cfg, q=teacher.q_mixture, coupling=coupling,
                    feature_targets=[targets[s.scene_id] for s in batch] if targets else None)
                optimizer.step(dc.backward(total, params.tensors()))
                sums['l2'] += l2.item()
                sums['l1'] += l1.item() if l1 is not None else 0.0
                sums['total'] += total.item()
                batches += 1
            row = {'epoch': epoch, **{k: v / batches for k, v in sums.items()}}
            self.history.append(row)
            logger.info(f"学生模型第 {epoch}/{cfg.student_epochs} 轮: L2={row['l2']:.4f}, "
                        f"L1={row['l1']:.4f}, 总损失={row['total']:.4f}")
        return StudentModel(params=params, config=cfg)


def train_student(dataset: Dataset, teacher: TeacherModel, config: RunConfig) -> StudentModel:
    return StudentTrainer(config).train(dataset, teacher)


def predict(model: StudentModel, scene: Scene) -> np.ndarray:
    """MAP 解码，返回 (n, T_p - T_h, 2) 的绝对位置"""
    with dc.no_grad():
        pred, _ = forward_scene(model.params, scene, model.config, with_head=False)
    return pred.positions()


def predict_mixture(model: StudentModel, scene: Scene) -> GaussianMixture:
    with dc.no_grad():
        _, head = forward_scene(model.params, scene, model.config, with_head=True)
    return head.to_mixture(model.config.var_floor)


def constant_velocity_predict(scene: Scene) -> np.ndarray:
    """匀速基线：沿最后一个观测位移外推"""
    history = scene.history()
    origin = history[:, -1, :]
    last = history[:, -1, :] - history[:, -2, :] if scene.t_h >= 2 else np.zeros_like(origin)
    steps = np.arange(1, scene.t_p - scene.t_h + 1, dtype=np.float64)
    return origin[:, None, :] + steps[None, :, None] * last[:, None, :]


def student_to_checkpoint(model: StudentModel) -> Checkpoint:
    return Checkpoint(kind='student', weights=model.params.named_arrays(),
                      meta={'d_z': model.params.d_z, 'm_p': model.params.m_p,
                            'config': config_to_dict(model.config)})


def student_from_checkpoint(checkpoint: Checkpoint) -> StudentModel:
    config = build_run_config(checkpoint.meta.get('config', {}))
    return StudentModel(params=StudentParams.from_arrays(checkpoint.weights), config=config)


def save_student(model: StudentModel, path: str):
    save_checkpoint(student_to_checkpoint(model), path)
    logger.info(f"学生模型已保存: {path}")


def load_student(path: str) -> StudentModel:
    return student_from_checkpoint(load_checkpoint(path, expected_kind='student'))
