from dataclasses import dataclass
from typing import List

import numpy as np


@dataclass(frozen=True)
class FrameGraph:
    """单帧碰撞时间交互图，weights 为对称、零对角、非负的 n×n 矩阵"""

    n: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.n, self.n):
            raise ValueError(f"邻接矩阵形状 {w.shape} 与 n={self.n} 不符")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("邻接矩阵必须为有限的非负数")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0):
            raise ValueError("邻接矩阵必须对称且对角线为0")
        w.setflags(write=False)
        object.__setattr__(self, 'weights', w)


@dataclass(frozen=True)
class GraphSequence:
    """观测窗口 t = 1..T_h 内逐帧的交互图"""

    graphs: List[FrameGraph]

    def __post_init__(self):
        sizes = {g.n for g in self.graphs}
        if len(sizes) > 1:
            raise ValueError(f"图序列中智能体数量不一致: {sorted(sizes)}")

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]
