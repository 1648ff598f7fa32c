"""
教师模型：碰撞时间交互图上的图变分自编码器

编码器为两层图卷积，解码器为内积 sigmoid(zzᵀ)。训练完成后对训练集每个观测帧
提取图级潜变量（节点后验均值的平均），再用 EM 拟合全局混合模型 Q。
"""
import logging
import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from config.settings import RunConfig, config_to_dict
from models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from models.graph import FrameGraph
from models.mixture import GaussianMixture, mixture_from_json, mixture_to_json
from models.scene import Dataset, Scene
from scheduler.pool import map_scenes
from services import diffcore as dc
from services.congestion_graph_service import DEFAULT_W_MAX, build_frame_graph, build_graph_sequence
from services.gaussian_service import fit_em
from services.scene_service import derive_velocities

logger = logging.getLogger(__name__)

FEATURE_DIM = 4


@dataclass(frozen=True)
class FeatureStats:
    """节点特征 (x, y, ẋ, ẏ) 的标准化统计量，只在训练集上计算"""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls) -> 'FeatureStats':
        return cls(mean=np.zeros(FEATURE_DIM), std=np.ones(FEATURE_DIM))

    @classmethod
    def fit(cls, scenes: Iterable[Scene]) -> 'FeatureStats':
        rows = [raw_node_features(scene, t) for scene in scenes for t in range(1, scene.t_h + 1)]
        if not rows:
            raise ValueError("没有可用于计算特征统计量的场景")
        stacked = np.concatenate(rows, axis=0)
        std = stacked.std(axis=0)
        return cls(mean=stacked.mean(axis=0), std=np.where(std > 1e-8, std, 1.0))

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_json(self) -> Dict[str, List[float]]:
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_json(cls, payload) -> 'FeatureStats':
        return cls(mean=np.asarray(payload['mean'], dtype=np.float64),
                   std=np.asarray(payload['std'], dtype=np.float64))


def raw_node_features(scene: Scene, t: int) -> np.ndarray:
    positions = scene.positions()[:, t - 1, :]
    return np.concatenate([positions, derive_velocities(scene, t)], axis=1)


def node_features(scene: Scene, t: int, stats: Optional[FeatureStats] = None) -> np.ndarray:
    """第 t 帧的节点特征矩阵 (n, 4)"""
    features = raw_node_features(scene, t)
    return features if stats is None else stats.apply(features)


@dataclass
class VgaeParams:
    w0: dc.Tensor
    b0: dc.Tensor
    w_mu: dc.Tensor
    b_mu: dc.Tensor
    w_logvar: dc.Tensor
    b_logvar: dc.Tensor

    @property
    def d_z(self) -> int:
        return self.w_mu.shape[1]

    def tensors(self) -> List[dc.Tensor]:
        return [getattr(self, f.name) for f in dataclasses.fields(self)]

    def named_arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name).numpy() for f in dataclasses.fields(self)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'VgaeParams':
        missing = [f.name for f in dataclasses.fields(cls) if f.name not in arrays]
        if missing:
            raise ValueError(f"教师模型权重缺失: {missing}")
        return cls(**{f.name: dc.Parameter(arrays[f.name], name=f.name) for f in dataclasses.fields(cls)})


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_vgae(d_z: int, hidden: int, rng: np.random.Generator) -> VgaeParams:
    if d_z < 1 or hidden < 1:
        raise ValueError(f"潜变量维度与隐层维度必须 ≥ 1: d_z={d_z}, hidden={hidden}")
    return VgaeParams(
        w0=dc.Parameter(_glorot(rng, FEATURE_DIM, hidden), name='w0'),
        b0=dc.Parameter(np.zeros(hidden), name='b0'),
        w_mu=dc.Parameter(_glorot(rng, hidden, d_z), name='w_mu'),
        b_mu=dc.Parameter(np.zeros(d_z), name='b_mu'),
        w_logvar=dc.Parameter(_glorot(rng, hidden, d_z), name='w_logvar'),
        b_logvar=dc.Parameter(np.zeros(d_z), name='b_logvar'),
    )


@dataclass
class TeacherModel:
    vgae: VgaeParams
    q_mixture: Optional[GaussianMixture] = None
    feature_stats: FeatureStats = dataclasses.field(default_factory=FeatureStats.identity)
    w_max: float = DEFAULT_W_MAX

    def __post_init__(self):
        if self.q_mixture is not None and self.q_mixture.dim != self.vgae.d_z:
            raise ValueError(f"混合模型维度 {self.q_mixture.dim} 与潜变量维度 {self.vgae.d_z} 不一致")

    @property
    def d_z(self) -> int:
        return self.vgae.d_z


def normalize_adjacency(g: FrameGraph) -> np.ndarray:
    """Â = D^(-1/2) (W + I) D^(-1/2)"""
    w = g.weights + np.eye(g.n)
    inv_sqrt = 1.0 / np.sqrt(w.sum(axis=1))
    return inv_sqrt[:, None] * w * inv_sqrt[None, :]


def encode(params: VgaeParams, g: FrameGraph, features: np.ndarray) -> Tuple[dc.Tensor, dc.Tensor]:
    """
    两层图卷积编码

    Args:
        params: 模型参数
        g: 交互图
        features: (n, 4) 节点特征

    Returns:
        (mu, logvar)，形状均为 (n, d_z)
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (g.n, FEATURE_DIM):
        raise ValueError(f"encode: 特征形状 {features.shape} 与 (n={g.n}, {FEATURE_DIM}) 不符")
    a_hat = dc.constant(normalize_adjacency(g))
    hidden = dc.relu(dc.bias_add(a_hat @ (dc.constant(features) @ params.w0), params.b0))
    propagated = a_hat @ hidden
    mu = dc.bias_add(propagated @ params.w_mu, params.b_mu)
    logvar = dc.bias_add(propagated @ params.w_logvar, params.b_logvar)
    return mu, logvar


def decode(z) -> dc.Tensor:
    """内积解码 sigmoid(zzᵀ)"""
    z = dc.constant(z)
    return dc.sigmoid(z @ dc.transpose(z))


def edge_targets(g: FrameGraph) -> np.ndarray:
    """w̃ = w / (1 + w)，把无上界的边权映射到 [0, 1)"""
    return g.weights / (1.0 + g.weights)


def elbo_terms(params: VgaeParams, g: FrameGraph, features: np.ndarray,
               rng: Optional[np.random.Generator] = None,
               eps: Optional[np.ndarray] = None) -> Tuple[dc.Tensor, dc.Tensor]:
    """
    Returns:
        (加权重构交叉熵, KL(q(z|g) ‖ N(0, I)))，均在节点/边上求和
    """
    mu, logvar = encode(params, g, features)
    if eps is None:
        eps = (rng or np.random.default_rng()).standard_normal(mu.shape)
    z = mu + dc.exp(dc.scale(logvar, 0.5)) * dc.constant(eps)

    n = g.n
    off_diag = 1.0 - np.eye(n)
    target = edge_targets(g)
    positive_mass = float(np.sum(target * off_diag))
    negative_mass = float(np.sum((1.0 - target) * off_diag))
    pos_weight = negative_mass / positive_mass if positive_mass > 0 else 1.0

    logits = z @ dc.transpose(z)
    # softplus(-l) = -log σ(l)，softplus(l) = -log(1 - σ(l))
    recon = dc.sum(
        dc.softplus(-logits) * dc.constant(pos_weight * target * off_diag)
        + dc.softplus(logits) * dc.constant((1.0 - target) * off_diag)
    )
    kl = dc.scale(dc.sum(dc.square(mu) + dc.exp(logvar) - logvar - 1.0), 0.5)
    return recon, kl


def elbo_loss(params: VgaeParams, g: FrameGraph, features: np.ndarray,
              rng: Optional[np.random.Generator] = None, eps: Optional[np.ndarray] = None) -> dc.Tensor:
    recon, kl = elbo_terms(params, g, features, rng=rng, eps=eps)
    return recon + kl


def extract_pattern(model: TeacherModel, scene: Scene) -> List[np.ndarray]:
    """逐观测帧提取图级潜变量 z（节点后验均值的平均，不采样）"""
    patterns = []
    with dc.no_grad():
        for t, g in enumerate(build_graph_sequence(scene, model.w_max), 1):
            mu, _ = encode(model.vgae, g, node_features(scene, t, model.feature_stats))
            patterns.append(mu.data.mean(axis=0))
    return patterns


def decoded_score_auc(model: TeacherModel, scenes: Iterable[Scene]) -> float:
    """
    正权重边与零权重边的解码得分 AUC（Mann-Whitney 统计量）

    只有一类边时返回 nan。
    """
    positive, negative = [], []
    with dc.no_grad():
        for scene in scenes:
            for t, g in enumerate(build_graph_sequence(scene, model.w_max), 1):
                mu, _ = encode(model.vgae, g, node_features(scene, t, model.feature_stats))
                scores = decode(mu).data
                upper = np.triu_indices(g.n, k=1)
                for s, w in zip(scores[upper], g.weights[upper]):
                    (positive if w > 0 else negative).append(s)
    if not positive or not negative:
        return float('nan')
    ranks = rankdata(np.concatenate([positive, negative]))
    n_pos, n_neg = len(positive), len(negative)
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class TeacherTrainer:
    """按场景做 Adam 更新（损失为该场景各观测帧 ELBO 的平均），再拟合混合模型 Q"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.elbo_history: List[float] = []

    def _scene_loss(self, params: VgaeParams, scene: Scene, stats: FeatureStats,
                    rng: np.random.Generator) -> dc.Tensor:
        losses = [elbo_loss(params, build_frame_graph(scene, t, self.config.w_max),
                            node_features(scene, t, stats), rng=rng)
                  for t in range(1, scene.t_h + 1)]
        return dc.mean(dc.concat([dc.reshape(loss, (1,)) for loss in losses], axis=0))

    def fit_mixture(self, model: TeacherModel, scenes: List[Scene]) -> GaussianMixture:
        cfg = self.config
        patterns = map_scenes(lambda scene: extract_pattern(model, scene), scenes)
        samples = np.array([z for scene_z in patterns for z in scene_z])
        logger.info(f"共提取 {samples.shape[0]} 个潜变量用于拟合 Q（M_Q={cfg.m_q}）")
        return fit_em(samples, cfg.m_q, seed=cfg.seed, max_iters=cfg.em_max_iters,
                      mode=cfg.em_mode, var_floor=cfg.var_floor)

    def train(self, dataset: Dataset) -> TeacherModel:
        cfg = self.config
        scenes = dataset.train_scenes()
        if not scenes:
            raise ValueError("训练集为空，无法训练教师模型")
        rng = np.random.default_rng([cfg.seed, 1])
        stats = FeatureStats.fit(scenes)
        params = init_vgae(cfg.d_z, cfg.vgae_hidden, rng)
        optimizer = dc.Adam(params.tensors(), lr=cfg.teacher_lr)
        self.elbo_history = []

        for epoch in range(1, cfg.teacher_epochs + 1):
            total = 0.0
            for idx in rng.permutation(len(scenes)):
                loss = self._scene_loss(params, scenes[idx], stats, rng)
                optimizer.step(dc.backward(loss, params.tensors()))
                total += loss.item()
            self.elbo_history.append(total / len(scenes))
            logger.info(f"教师模型第 {epoch}/{cfg.teacher_epochs} 轮, 平均ELBO损失={self.elbo_history[-1]:.4f}")

        model = TeacherModel(vgae=params, feature_stats=stats, w_max=cfg.w_max)
        model.q_mixture = self.fit_mixture(model, scenes)
        return model


def train_teacher(dataset: Dataset, config: RunConfig) -> TeacherModel:
    return TeacherTrainer(config).train(dataset)


def teacher_to_checkpoint(model: TeacherModel, config: Optional[RunConfig] = None) -> Checkpoint:
    meta = {
        'd_z': model.d_z,
        'q_mixture': mixture_to_json(model.q_mixture) if model.q_mixture is not None else None,
        'feature_stats': model.feature_stats.to_json(),
        'w_max': model.w_max,
    }
    if config is not None:
        meta['config'] = config_to_dict(config)
    return Checkpoint(kind='teacher', weights=model.vgae.named_arrays(), meta=meta)


def teacher_from_checkpoint(checkpoint: Checkpoint) -> TeacherModel:
    params = VgaeParams.from_arrays(checkpoint.weights)
    if int(checkpoint.meta.get('d_z', params.d_z)) != params.d_z:
        raise ValueError(f"检查点中的 d_z={checkpoint.meta.get('d_z')} 与权重形状不一致")
    q_payload = checkpoint.meta.get('q_mixture')
    stats_payload = checkpoint.meta.get('feature_stats')
    return TeacherModel(
        vgae=params,
        q_mixture=mixture_from_json(q_payload) if q_payload else None,
        feature_stats=FeatureStats.from_json(stats_payload) if stats_payload else FeatureStats.identity(),
        w_max=float(checkpoint.meta.get('w_max', DEFAULT_W_MAX)),
    )


def save_teacher(model: TeacherModel, path: str, config: Optional[RunConfig] = None):
    save_checkpoint(teacher_to_checkpoint(model, config), path)
    logger.info(f"教师模型已保存: {path}")


def load_teacher(path: str) -> TeacherModel:
    return teacher_from_checkpoint(load_checkpoint(path, expected_kind='teacher'))
