from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

from config.settings import Settings

T = TypeVar('T')
R = TypeVar('R')


def map_scenes(fn: Callable[[T], R], items: Sequence[T], max_workers: Optional[int] = None) -> List[R]:
    """
    用线程池并发执行逐场景的纯函数，结果按输入顺序返回

    Args:
        fn: 作用于单个场景（或任意元素）的函数
        items: 输入序列
        max_workers: 线程数，默认取 Settings.TASK_CONCURRENCY；为1时顺序执行

    Returns:
        与 items 一一对应的结果列表
    """
    items = list(items)
    workers = Settings.TASK_CONCURRENCY if max_workers is None else max_workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
