from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

MASS_TOL = 1e-10


def safe_log(x) -> np.ndarray:
    """逐元素取对数，0 映射为 -inf"""
    with np.errstate(divide='ignore'):
        return np.log(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class VariationalCoupling:
    """
    变分耦合矩阵 α、β，形状均为 M_Q×M_P

    α 的列和为学生权重 ω，β 的行和为教师权重 λ，两者总质量都为1。
    与具体混合模型的边缘一致性由 cpm_service.check_coupling 校验。
    log_alpha/log_beta 保存对数域的值，线性值下溢为0的项在对数域仍然有限；
    直接给出线性值构造时由线性值取对数得到。
    """

    alpha: np.ndarray
    beta: np.ndarray
    log_alpha: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    log_beta: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        beta = np.array(self.beta, dtype=np.float64)
        if alpha.ndim != 2 or alpha.shape != beta.shape:
            raise ValueError(f"α 与 β 形状必须一致且为二维: {alpha.shape} / {beta.shape}")
        for name, mat in (('alpha', alpha), ('beta', beta)):
            if not np.all(np.isfinite(mat)) or np.any(mat < 0):
                raise ValueError(f"{name} 必须为非负有限数")
            if abs(mat.sum() - 1.0) > MASS_TOL:
                raise ValueError(f"{name} 总质量必须为1，当前为 {mat.sum()!r}")
        log_alpha = safe_log(alpha) if self.log_alpha is None else np.array(self.log_alpha, dtype=np.float64)
        log_beta = safe_log(beta) if self.log_beta is None else np.array(self.log_beta, dtype=np.float64)
        if log_alpha.shape != alpha.shape or log_beta.shape != beta.shape:
            raise ValueError("对数域耦合与线性耦合形状不一致")
        for mat in (alpha, beta, log_alpha, log_beta):
            mat.setflags(write=False)
        object.__setattr__(self, 'alpha', alpha)
        object.__setattr__(self, 'beta', beta)
        object.__setattr__(self, 'log_alpha', log_alpha)
        object.__setattr__(self, 'log_beta', log_beta)

    @classmethod
    def from_log(cls, log_alpha: np.ndarray, log_beta: np.ndarray) -> 'VariationalCoupling':
        """由更新得到的对数域值构造；此时质量或有限性不满足属于数值失败"""
        try:
            return cls(alpha=np.exp(log_alpha), beta=np.exp(log_beta), log_alpha=log_alpha, log_beta=log_beta)
        except ValueError as e:
            raise FloatingPointError(f"耦合更新数值异常: {str(e)}") from e

    @property
    def shape(self):
        return self.alpha.shape

    def to_json(self) -> Dict[str, Any]:
        return {'alpha': self.alpha.tolist(), 'beta': self.beta.tolist()}


@dataclass
class CpmReport:
    """CPM 求解过程记录，bound_trace[0] 为初始耦合下的上界"""

    bound_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def to_json(self) -> Dict[str, Any]:
        return {
            'bound_trace': list(self.bound_trace),
            'iterations': self.iterations,
            'converged': self.converged,
            'final_bound': self.bound_trace[-1] if self.bound_trace else None,
        }
