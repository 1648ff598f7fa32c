"""
对角高斯与高斯混合的数值计算：密度、采样、熵、交叉熵、KL 以及 EM 拟合
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from models.mixture import VAR_FLOOR, DiagGaussian, GaussianMixture

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def _check_dims(p: DiagGaussian, q: DiagGaussian):
    if p.dim != q.dim:
        raise ValueError(f"高斯分布维度不一致: {p.dim} 与 {q.dim}")


def gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> float:
    """KL(p‖q)，闭式解，单位 nats"""
    _check_dims(p, q)
    diff = p.mean - q.mean
    terms = np.log(q.var / p.var) + (p.var + diff * diff) / q.var - 1.0
    return max(0.5 * float(terms.sum()), 0.0)


def gaussian_entropy(p: DiagGaussian) -> float:
    return 0.5 * float(np.sum(np.log(2.0 * np.pi * np.e * p.var)))


def gaussian_cross_entropy(p: DiagGaussian, q: DiagGaussian) -> float:
    """E_p[-log q]"""
    _check_dims(p, q)
    diff = p.mean - q.mean
    return 0.5 * float(np.sum(LOG_2PI + np.log(q.var) + (p.var + diff * diff) / q.var))


def diag_log_pdf(g: DiagGaussian, x: np.ndarray) -> np.ndarray:
    """单点 (d,) 返回标量，批量 (N, d) 返回 (N,)"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise ValueError(f"样本维度 {x.shape[-1]} 与分布维度 {g.dim} 不一致")
    diff = x - g.mean
    return -0.5 * (np.sum(diff * diff / g.var, axis=-1) + np.sum(np.log(g.var)) + g.dim * LOG_2PI)


def _component_log_pdfs(m: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """(N, M)：log λ_i + log q_i(x)"""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with np.errstate(divide='ignore'):
        log_w = np.log(m.weights)
    return np.stack([diag_log_pdf(c, x) for c in m.components], axis=1) + log_w


def gmm_log_pdf(m: GaussianMixture, x: np.ndarray):
    """混合密度的对数，按分量做 log-sum-exp"""
    x = np.asarray(x, dtype=np.float64)
    result = logsumexp(_component_log_pdfs(m, x), axis=1)
    return float(result[0]) if x.ndim == 1 else result


def responsibilities(m: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """后验分量权重 λ_i q_i(x) / Σ_k λ_k q_k(x)，每行位于单纯形上"""
    x = np.asarray(x, dtype=np.float64)
    resp = softmax(_component_log_pdfs(m, x), axis=1)
    return resp[0] if x.ndim == 1 else resp


def gmm_mean(m: GaussianMixture) -> np.ndarray:
    return m.weights @ m.means


def gmm_sample(m: GaussianMixture, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """先按权重抽分量，再从该分量的高斯中采样"""
    count = 1 if size is None else int(size)
    idx = rng.choice(m.n_components, size=count, p=m.weights)
    noise = rng.standard_normal((count, m.dim))
    samples = m.means[idx] + noise * np.sqrt(m.vars[idx])
    return samples[0] if size is None else samples


def mc_kl(p: GaussianMixture, q: GaussianMixture, n: int, rng: np.random.Generator) -> Tuple[float, float]:
    """
    KL(P‖Q) 的蒙特卡罗估计

    Returns:
        (估计值, 标准误)
    """
    if p.dim != q.dim:
        raise ValueError(f"混合模型维度不一致: {p.dim} 与 {q.dim}")
    x = gmm_sample(p, rng, size=n)
    ratio = gmm_log_pdf(p, x) - gmm_log_pdf(q, x)
    return float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(n))


class GaussianMixtureFitter:
    """
    EM 拟合对角高斯混合

    batch 模式下每轮使用全部样本，对数似然单调不减；stochastic 模式每轮抽取一个
    小批量做 E 步，再用递减步长混合充分统计量。
    """

    def __init__(self, n_components: int, seed: int = 0, max_iters: int = 200, mode: str = 'batch',
                 tol: float = 1e-10, var_floor: float = VAR_FLOOR, batch_size: int = 256):
        if n_components < 1:
            raise ValueError(f"分量数必须 ≥ 1: {n_components}")
        if max_iters < 1:
            raise ValueError(f"EM 迭代次数必须 ≥ 1: {max_iters}")
        if mode not in ('batch', 'stochastic'):
            raise ValueError(f"未知 EM 模式: {mode}")
        self.n_components = n_components
        self.seed = seed
        self.max_iters = max_iters
        self.mode = mode
        self.tol = tol
        self.var_floor = var_floor
        self.batch_size = batch_size
        self.log_likelihood_trace: List[float] = []

    def _initialize(self, x: np.ndarray, rng: np.random.Generator, m: int):
        unique = np.unique(x, axis=0)
        picks = np.sort(rng.choice(unique.shape[0], size=m, replace=False))
        means = unique[picks].copy()
        var = np.maximum(x.var(axis=0), self.var_floor)
        return np.full(m, 1.0 / m), means, np.tile(var, (m, 1))

    def _e_step(self, x, weights, means, vars_):
        with np.errstate(divide='ignore'):
            log_w = np.log(weights)
        log_prob = np.stack([
            -0.5 * (np.sum((x - means[k]) ** 2 / vars_[k], axis=1) + np.sum(np.log(vars_[k]))
                    + x.shape[1] * LOG_2PI)
            for k in range(weights.shape[0])
        ], axis=1) + log_w
        norm = logsumexp(log_prob, axis=1)
        return np.exp(log_prob - norm[:, None]), float(norm.sum())

    def _statistics(self, x, resp):
        s0 = resp.sum(axis=0) / x.shape[0]
        s1 = resp.T @ x / x.shape[0]
        s2 = resp.T @ (x * x) / x.shape[0]
        return s0, s1, s2

    def _params_from_statistics(self, s0, s1, s2, prev_means, prev_vars):
        live = s0 > 1e-300
        safe = np.where(live, s0, 1.0)[:, None]
        means = np.where(live[:, None], s1 / safe, prev_means)
        vars_ = np.where(live[:, None], s2 / safe - means * means, prev_vars)
        return s0 / s0.sum(), means, np.maximum(vars_, self.var_floor)

    def _m_step(self, x, resp, prev_means, prev_vars):
        nk = resp.sum(axis=0)
        live = nk > 1e-300
        safe = np.where(live, nk, 1.0)[:, None]
        means = np.where(live[:, None], resp.T @ x / safe, prev_means)
        vars_ = np.empty_like(means)
        for k in range(nk.shape[0]):
            if live[k]:
                diff = x - means[k]
                vars_[k] = resp[:, k] @ (diff * diff) / nk[k]
            else:
                vars_[k] = prev_vars[k]
        return nk / nk.sum(), means, np.maximum(vars_, self.var_floor)

    def fit(self, samples) -> GaussianMixture:
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < self.n_components:
            raise ValueError(f"样本数 {x.shape[0]} 少于分量数 {self.n_components}")
        if not np.all(np.isfinite(x)):
            raise ValueError("EM 样本中存在非有限数值")

        rng = np.random.default_rng(self.seed)
        m = self.n_components
        n_unique = np.unique(x, axis=0).shape[0]
        if n_unique < m:
            logger.warning(f"样本中只有 {n_unique} 个不同取值，分量数从 {m} 降为 {n_unique}")
            m = n_unique
        weights, means, vars_ = self._initialize(x, rng, m)
        self.log_likelihood_trace = []

        stats = None
        for it in range(self.max_iters):
            if self.mode == 'batch':
                resp, ll = self._e_step(x, weights, means, vars_)
                self.log_likelihood_trace.append(ll)
                if it > 0 and abs(ll - self.log_likelihood_trace[-2]) <= self.tol * max(abs(ll), 1.0):
                    break
                weights, means, vars_ = self._m_step(x, resp, means, vars_)
            else:
                size = min(x.shape[0], max(m, self.batch_size))
                batch = x[np.sort(rng.choice(x.shape[0], size=size, replace=False))]
                resp, _ = self._e_step(batch, weights, means, vars_)
                batch_stats = self._statistics(batch, resp)
                step = (it + 1) ** -0.6
                stats = batch_stats if stats is None else tuple(
                    (1.0 - step) * s + step * b for s, b in zip(stats, batch_stats))
                weights, means, vars_ = self._params_from_statistics(*stats, means, vars_)
                self.log_likelihood_trace.append(self._e_step(x, weights, means, vars_)[1])

        logger.info(f"EM 拟合完成: 模式={self.mode}, 分量={m}, 迭代={len(self.log_likelihood_trace)}, "
                    f"对数似然={self.log_likelihood_trace[-1]:.4f}")
        return GaussianMixture.from_arrays(weights, means, vars_, floor=self.var_floor)


def fit_em(samples, m: int, seed: int = 0, max_iters: int = 200, mode: str = 'batch',
           var_floor: float = VAR_FLOOR) -> GaussianMixture:
    return GaussianMixtureFitter(m, seed=seed, max_iters=max_iters, mode=mode, var_floor=var_floor).fit(samples)
