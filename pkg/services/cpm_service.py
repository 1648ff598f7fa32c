"""
拥堵模式匹配（CPM）

学生混合 P 与教师混合 Q 之间 KL 散度的变分上界
    L1 = Σ_ij α_ij·KL(p_j‖q_i) + KL(α‖β)
以及 α/β 的闭式坐标更新和 p_j 的闭式更新。所有指数运算在对数域完成。
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from models.coupling import MASS_TOL, CpmReport, VariationalCoupling, safe_log
from models.mixture import DiagGaussian, GaussianMixture
from services.gaussian_service import gaussian_kl

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 200
DEFAULT_TOL = 1e-6
DEFAULT_INNER_ITERS = 500
DEFAULT_COUPLING_TOL = 1e-13


def kl_matrix(p: GaussianMixture, q: GaussianMixture) -> np.ndarray:
    """M_Q×M_P 表，第 (i, j) 项为 KL(p_j‖q_i)"""
    if p.dim != q.dim:
        raise ValueError(f"混合模型维度不一致: P={p.dim}, Q={q.dim}")
    return np.array([[gaussian_kl(pj, qi) for pj in p.components] for qi in q.components])


def init_coupling(p: GaussianMixture, q: GaussianMixture) -> VariationalCoupling:
    """独立耦合 α = β = λωᵀ"""
    outer = np.outer(q.weights, p.weights)
    outer = outer / outer.sum()
    return VariationalCoupling(alpha=outer, beta=outer.copy())


def check_coupling(p: GaussianMixture, q: GaussianMixture, c: VariationalCoupling, tol: float = MASS_TOL):
    if c.shape != (q.n_components, p.n_components):
        raise ValueError(f"耦合形状 {c.shape} 与 (M_Q, M_P)=({q.n_components}, {p.n_components}) 不一致")
    col_err = np.max(np.abs(c.alpha.sum(axis=0) - p.weights))
    row_err = np.max(np.abs(c.beta.sum(axis=1) - q.weights))
    if col_err > tol or row_err > tol:
        raise ValueError(f"耦合与混合权重不一致: α列和误差={col_err:.3e}, β行和误差={row_err:.3e}")


def bound_terms(p: GaussianMixture, q: GaussianMixture, c: VariationalCoupling) -> Tuple[float, float]:
    """
    Returns:
        (Σ α_ij·KL(p_j‖q_i), KL(α‖β))；0·log(0/·) 记为0
    """
    check_coupling(p, q, c)
    transport = float(np.sum(c.alpha * kl_matrix(p, q)))
    mask = c.alpha > 0
    ratio = c.log_alpha[mask] - c.log_beta[mask]
    return transport, float(np.sum(c.alpha[mask] * ratio))


def upper_bound_L1(p: GaussianMixture, q: GaussianMixture, c: VariationalCoupling) -> float:
    transport, coupling_kl = bound_terms(p, q, c)
    return transport + coupling_kl


def log_alpha_step(log_beta: np.ndarray, kl: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """
    对数域 α 更新：log α_ij = log ω_j + log β_ij - KL_ij - logsumexp_i'(log β_i'j - KL_i'j)

    权重为0的列整列为 -inf。
    """
    log_scores = log_beta - kl
    log_alpha = np.full_like(log_scores, -np.inf)
    for j, w in enumerate(omega):
        if w == 0:
            continue
        column = log_scores[:, j]
        if np.all(np.isneginf(column)):
            raise ValueError(f"β 第 {j} 列全为0，初始化退化")
        log_alpha[:, j] = np.log(w) + column - logsumexp(column)
    return log_alpha


def log_alpha_step_with_weights(log_beta: np.ndarray, kl: np.ndarray) -> np.ndarray:
    """ω 同时作为变量时 α 的联合最小解：α_ij ∝ β_ij e^{-KL(p_j‖q_i)}，整体归一化"""
    log_scores = log_beta - kl
    if np.all(np.isneginf(log_scores)):
        raise ValueError("β 全为0，初始化退化")
    return log_scores - logsumexp(log_scores)


def log_beta_step(log_alpha: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """对数域 β 更新：log β_ij = log λ_i + log α_ij - logsumexp_j' log α_ij'"""
    lam = np.asarray(lam, dtype=np.float64)
    log_beta = np.full_like(log_alpha, -np.inf)
    for i, weight in enumerate(lam):
        if weight == 0:
            continue
        row = log_alpha[i]
        if np.all(np.isneginf(row)):
            raise ValueError(f"α 第 {i} 行全为0，无法更新 β")
        log_beta[i] = np.log(weight) + row - logsumexp(row)
    return log_beta


def update_alpha(p: GaussianMixture, q: GaussianMixture, c: VariationalCoupling,
                 kl: Optional[np.ndarray] = None) -> np.ndarray:
    """α_ij = ω_j β_ij e^{-KL(p_j‖q_i)} / Σ_i' β_i'j e^{-KL(p_j‖q_i')}"""
    kl = kl_matrix(p, q) if kl is None else kl
    return np.exp(log_alpha_step(c.log_beta, kl, p.weights))


def update_beta(c: VariationalCoupling, lam: np.ndarray, alpha: Optional[np.ndarray] = None) -> np.ndarray:
    """β_ij = λ_i α_ij / Σ_j' α_ij'"""
    log_alpha = c.log_alpha if alpha is None else safe_log(alpha)
    return np.exp(log_beta_step(log_alpha, lam))


def p_step_closed_form(q: GaussianMixture, alpha: np.ndarray, j: int) -> DiagGaussian:
    """
    固定 α 时 p_j 的闭式最优解

    精度 Λ* = Σ_i (α_ij/ω_j)·Λ_i，均值 Λ*⁻¹ Σ_i (α_ij/ω_j)·Λ_i μ_i
    """
    column = np.asarray(alpha, dtype=np.float64)[:, j]
    mass = column.sum()
    if mass <= 0:
        raise ValueError(f"α 第 {j} 列质量为0，p_{j} 无法更新")
    w = column / mass
    precisions = 1.0 / q.vars
    precision = w @ precisions
    mean = (w @ (precisions * q.means)) / precision
    return DiagGaussian.floored(mean, 1.0 / precision)


def closed_form_p_step(p: GaussianMixture, q: GaussianMixture, c: VariationalCoupling) -> GaussianMixture:
    """对所有列执行闭式 p 步；ω_j = 0 的分量保持不变"""
    components = []
    frozen = []
    for j, comp in enumerate(p.components):
        if p.weights[j] == 0:
            frozen.append(j)
            components.append(comp)
        else:
            components.append(p_step_closed_form(q, c.alpha, j))
    if frozen:
        logger.warning(f"分量 {frozen} 权重为0，已冻结")
    return GaussianMixture(weights=p.weights, components=tuple(components))


def refine_coupling(p: GaussianMixture, q: GaussianMixture, c: Optional[VariationalCoupling] = None,
                    steps: int = 5) -> VariationalCoupling:
    """P、Q 固定时交替执行 steps 次 α/β 更新（ω 保持不变）"""
    c = init_coupling(p, q) if c is None else c
    kl = kl_matrix(p, q)
    log_beta = c.log_beta
    for _ in range(steps):
        log_alpha = log_alpha_step(log_beta, kl, p.weights)
        log_beta = log_beta_step(log_alpha, q.weights)
        c = VariationalCoupling.from_log(log_alpha, log_beta)
    return c


class CpmSolver:
    """
    交替优化 L1：P 固定时反复做 α/β 闭式更新直到耦合不再变化，再更新 {p_j}

    p_step 为空时使用闭式解，并且把 ω 也作为变量（α 整体归一化，ω 取 α 的列和）；
    给出 p_step 时 ω 固定，由调用方负责 p_j 的更新。
    """

    def __init__(self, max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
                 p_step: Optional[Callable[[GaussianMixture, VariationalCoupling], GaussianMixture]] = None,
                 inner_iters: int = DEFAULT_INNER_ITERS, coupling_tol: float = DEFAULT_COUPLING_TOL):
        if max_iters < 1 or inner_iters < 1:
            raise ValueError(f"迭代次数必须为正: max_iters={max_iters}, inner_iters={inner_iters}")
        self.max_iters = max_iters
        self.tol = tol
        self.p_step = p_step
        self.inner_iters = inner_iters
        self.coupling_tol = coupling_tol

    def _bound(self, p, q, c, iteration: int) -> float:
        value = upper_bound_L1(p, q, c)
        if not np.isfinite(value):
            raise FloatingPointError(f"第 {iteration} 次迭代上界非有限: {value}")
        return value

    def _couple(self, p: GaussianMixture, q: GaussianMixture,
                c: VariationalCoupling) -> Tuple[GaussianMixture, VariationalCoupling]:
        """P 的分量固定，α/β 交替更新至 α 的变化不超过 coupling_tol"""
        kl = kl_matrix(p, q)
        log_beta = c.log_beta
        previous = c.alpha
        for _ in range(self.inner_iters):
            if self.p_step is None:
                log_alpha = log_alpha_step_with_weights(log_beta, kl)
                omega = np.exp(log_alpha).sum(axis=0)
                p = GaussianMixture(weights=omega / omega.sum(), components=p.components)
            else:
                log_alpha = log_alpha_step(log_beta, kl, p.weights)
            log_beta = log_beta_step(log_alpha, q.weights)
            c = VariationalCoupling.from_log(log_alpha, log_beta)
            change = np.max(np.abs(c.alpha - previous))
            previous = c.alpha
            if change <= self.coupling_tol:
                break
        return p, c

    def solve(self, p0: GaussianMixture, q: GaussianMixture) -> Tuple[GaussianMixture, VariationalCoupling, CpmReport]:
        if p0.dim != q.dim:
            raise ValueError(f"混合模型维度不一致: P={p0.dim}, Q={q.dim}")
        p = p0
        c = init_coupling(p, q)
        report = CpmReport(bound_trace=[self._bound(p, q, c, 0)])

        for it in range(1, self.max_iters + 1):
            p, c = self._couple(p, q, c)
            p = closed_form_p_step(p, q, c) if self.p_step is None else self.p_step(p, c)

            value = self._bound(p, q, c, it)
            previous = report.bound_trace[-1]
            report.bound_trace.append(value)
            report.iterations = it
            if abs(previous - value) <= self.tol * max(abs(previous), 1.0):
                report.converged = True
                break

        logger.info(f"CPM 求解结束: 迭代 {report.iterations} 次, L1={report.bound_trace[-1]:.6g}, "
                    f"收敛={report.converged}")
        return p, c, report


def cpm_solve(p0: GaussianMixture, q: GaussianMixture, config=None,
              p_step: Optional[Callable] = None) -> Tuple[GaussianMixture, VariationalCoupling, CpmReport]:
    max_iters = getattr(config, 'cpm_max_iters', DEFAULT_MAX_ITERS)
    tol = getattr(config, 'cpm_tol', DEFAULT_TOL)
    return CpmSolver(max_iters=max_iters, tol=tol, p_step=p_step).solve(p0, q)
