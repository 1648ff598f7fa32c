from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

VAR_FLOOR = 1e-6
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DiagGaussian:
    """对角协方差高斯分布，var 为各维方差"""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        var = np.asarray(self.var, dtype=np.float64).reshape(-1)
        if mean.shape != var.shape:
            raise ValueError(f"均值维度 {mean.shape} 与方差维度 {var.shape} 不一致")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("高斯分布参数必须为有限数")
        if np.any(var < VAR_FLOOR * (1.0 - 1e-9)):
            raise ValueError(f"方差低于下限 {VAR_FLOOR}: {var.min()}")
        mean.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'var', var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def floored(cls, mean, var, floor: float = VAR_FLOOR) -> 'DiagGaussian':
        return cls(mean=np.asarray(mean, dtype=np.float64),
                   var=np.maximum(np.asarray(var, dtype=np.float64), floor))


@dataclass(frozen=True)
class GaussianMixture:
    """
    对角高斯混合模型

    weights 位于单纯形上（和为1，误差 1e-12 以内），所有分量维度相同。
    """

    weights: np.ndarray
    components: Tuple[DiagGaussian, ...]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        components = tuple(self.components)
        if len(components) == 0 or weights.shape[0] != len(components):
            raise ValueError(f"权重个数 {weights.shape[0]} 与分量个数 {len(components)} 不一致")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("混合权重必须为非负有限数")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"混合权重之和必须为1，当前为 {weights.sum()!r}")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError(f"分量维度不一致: {sorted(dims)}")
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'components', components)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def vars(self) -> np.ndarray:
        return np.stack([c.var for c in self.components])

    @classmethod
    def from_arrays(cls, weights, means, vars_, floor: float = VAR_FLOOR) -> 'GaussianMixture':
        """由数组构造；权重会重新归一化以吸收舍入误差"""
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        total = weights.sum()
        if total <= 0:
            raise ValueError("混合权重之和必须为正")
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        vars_ = np.atleast_2d(np.asarray(vars_, dtype=np.float64))
        comps = tuple(DiagGaussian.floored(m, v, floor) for m, v in zip(means, vars_))
        return cls(weights=weights / total, components=comps)


def mixture_to_json(mixture: GaussianMixture) -> Dict[str, Any]:
    return {
        'weights': mixture.weights.tolist(),
        'means': mixture.means.tolist(),
        'vars': mixture.vars.tolist(),
    }


def mixture_from_json(payload: Dict[str, Any]) -> GaussianMixture:
    try:
        weights: List[float] = payload['weights']
        means: Sequence = payload['means']
        vars_: Sequence = payload['vars']
    except (KeyError, TypeError) as e:
        raise ValueError(f"混合模型JSON缺少字段: {str(e)}")
    if not (len(weights) == len(means) == len(vars_)):
        raise ValueError("混合模型JSON中 weights/means/vars 长度不一致")
    weights = np.asarray(weights, dtype=np.float64)
    # 手写文件中的权重允许有十进制舍入误差
    if abs(weights.sum() - 1.0) < 1e-9:
        weights = weights / weights.sum()
    comps = tuple(DiagGaussian(mean=np.asarray(m), var=np.asarray(v)) for m, v in zip(means, vars_))
    return GaussianMixture(weights=weights, components=comps)
