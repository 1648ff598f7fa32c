"""
稠密张量上的反向模式自动微分

张量数据统一为 float64。每个运算在前向时记录父节点和局部梯度函数，
backward 从标量损失出发按拓扑逆序传播梯度。除了 bias_add 之外不做广播，
二元运算要求两侧形状完全一致。
"""
import threading
import contextlib
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, 'enabled', True)


@contextlib.contextmanager
def no_grad():
    """在该上下文内的运算不记录到计算图（每个线程独立）"""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ('data', 'requires_grad', '_parents', '_backward', '_op', 'name')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple['Tensor', ...] = (), _backward: Optional[Callable] = None,
                 _op: str = ''):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, op={self._op or 'leaf'})"

    # 运算符重载，标量参与时走 scale/shift
    def __add__(self, other):
        return shift(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return shift(self, -other) if np.isscalar(other) else sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), other) if np.isscalar(other) else sub(other, self)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / other) if np.isscalar(other) else div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def Parameter(data, name: Optional[str] = None) -> Tensor:
    """可训练的叶子张量"""
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: 输出中出现非有限数值")
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, _op=op)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ValueError(f"{op}: 形状不匹配 {a.shape} 与 {b.shape}")


# ---------------------------------------------------------------- 二元运算

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape('add', a, b)
    return _record('add', a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape('sub', a, b)
    return _record('sub', a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape('mul', a, b)
    ad, bd = a.data, b.data
    return _record('mul', ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape('div', a, b)
    ad, bd = a.data, b.data
    return _record('div', ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: 形状不匹配 {a.shape} 与 {b.shape}")
    ad, bd = a.data, b.data
    return _record('matmul', ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bias_add(x, bias) -> Tensor:
    """(n, k) + (k,)，唯一允许的广播"""
    x, bias = constant(x), constant(bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ValueError(f"bias_add: 形状不匹配 {x.shape} 与 {bias.shape}")
    return _record('bias_add', x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------- 一元运算

def neg(a) -> Tensor:
    a = constant(a)
    return _record('neg', -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _record('scale', a.data * c, (a,), lambda g: (g * c,))


def shift(a, c: float) -> Tensor:
    a = constant(a)
    return _record('shift', a.data + float(c), (a,), lambda g: (g,))


def square(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _record('square', ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _record('exp', out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = constant(a)
    ad = a.data
    if np.any(ad <= 0):
        raise FloatingPointError("log: 输入必须为正数")
    return _record('log', np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _record('tanh', out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = expit(a.data)
    return _record('sigmoid', out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = constant(a)
    mask = (a.data > 0).astype(np.float64)
    return _record('relu', a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    """log(1 + e^x)，数值稳定写法"""
    a = constant(a)
    ad = a.data
    out = np.log1p(np.exp(-np.abs(ad))) + np.maximum(ad, 0.0)
    return _record('softplus', out, (a,), lambda g: (g * expit(ad),))


def softmax(a) -> Tensor:
    """沿最后一维的 softmax"""
    a = constant(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record('softmax', out, (a,), backward_fn)


# ---------------------------------------------------------------- 规约与形状

def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = constant(a)
    shape = a.shape
    if axis is None:
        return _record('sum', np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return _record('sum', out, (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = constant(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: 输入为空")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != ax]
        first = [d for i, d in enumerate(tensors[0].shape) if i != ax]
        if t.data.ndim != ndim or other != first:
            raise ValueError(f"concat: 形状不匹配 {[x.shape for x in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _record('concat', out, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)))


def slice_axis(a, start: int, stop: int, axis: int = -1) -> Tensor:
    a = constant(a)
    ax = axis % a.data.ndim
    if not (0 <= start < stop <= a.shape[ax]):
        raise ValueError(f"slice: 区间 [{start}, {stop}) 超出维度 {a.shape}")
    index = [slice(None)] * a.data.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record('slice', a.data[index].copy(), (a,), backward_fn)


def transpose(a) -> Tensor:
    a = constant(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose: 仅支持二维张量，得到 {a.shape}")
    return _record('transpose', a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = constant(a)
    original = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: 无法把 {original} 变形为 {shape}")
    return _record('reshape', out.copy(), (a,), lambda g: (g.reshape(original),))


# ---------------------------------------------------------------- 反向传播

class Tape:
    """按拓扑顺序排列的计算节点，父节点在前"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> 'Tape':
        order: List[Tensor] = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """
    计算标量损失对叶子参数的梯度

    Args:
        loss: 标量张量
        params: 可选的参数列表；给出时未参与计算的参数返回零梯度

    Returns:
        参数张量 → 梯度数组
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: 损失必须是标量，得到形状 {loss.shape}")
    result: Dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        tape = Tape.from_loss(loss)
        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape.nodes):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                result[node] = result[node] + grad if node in result else grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad
    if params is not None:
        return {p: result.get(p, np.zeros_like(p.data)) for p in params}
    return result


def grad_check(f: Callable[[Tensor], Tensor], at, h: float = 1e-5, floor: float = 1e-6) -> float:
    """
    中心差分梯度检验

    Args:
        f: 参数张量 → 标量张量
        at: 检验点
        h: 差分步长
        floor: 相对误差分母下限，两侧梯度都接近0时按绝对误差计

    Returns:
        各坐标中最大的相对误差
    """
    base = np.array(at.data if isinstance(at, Tensor) else at, dtype=np.float64)
    param = Parameter(base.copy())
    analytic = backward(f(param), [param])[param]

    numeric = np.zeros_like(base)
    with no_grad():
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += h
            minus = base.copy()
            minus[idx] -= h
            numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0


class Adam:
    """Adam 优化器，原地更新参数张量的数据"""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Dict[Tensor, np.ndarray]):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for k, p in enumerate(self.params):
            g = grads.get(p)
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bias1
            v_hat = self.v[k] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
