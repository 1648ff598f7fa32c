"""
命令行入口：simulate / train-teacher / train-student / evaluate / cpm-solve / plot-data / convert，
以及按 manifest 重跑的 rerun

退出码：0 成功，1 参数或输入校验失败，2 运行时错误
"""
import sys
import argparse
import logging
from typing import Any, Dict, List, Optional

from config.settings import Settings, load_run_config, parse_overrides
from scheduler.task_runner import load_manifest, rerun_options, run_pipeline_task

logger = logging.getLogger(__name__)

# 只影响配置、不写入 options 的参数
_CONFIG_ARGS = ('command', 'config', 'set', 'seed')


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误时打印用法并抛出 UsageError，而不是直接以退出码2结束进程"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: 参数错误: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument('--out', default=Settings.DEFAULT_OUT_DIR, help='产物输出目录')
    common.add_argument('--config', help='key=value 配置文件或 manifest.json')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='覆盖单个配置项，可重复')
    common.add_argument('--seed', type=int, help='覆盖配置中的随机种子')

    parser = _ArgumentParser(prog='congestion-pipeline', description='拥堵模式蒸馏的轨迹预测流水线')
    sub = parser.add_subparsers(dest='command', parser_class=_ArgumentParser)
    sub.required = True

    sub.add_parser('simulate', parents=[common], help='生成四类仿真场景与碰撞标注')

    p = sub.add_parser('train-teacher', parents=[common], help='训练图变分自编码器并拟合混合模型 Q')
    p.add_argument('--data', required=True, help='数据集目录或 JSONL 文件')
    p.add_argument('--dump-graphs', action='store_true', help='同时写出 graphs.jsonl')

    p = sub.add_parser('train-student', parents=[common], help='在教师模型指导下训练轨迹预测模型')
    p.add_argument('--data', required=True)
    p.add_argument('--teacher', required=True, help='teacher.json 检查点')

    p = sub.add_parser('evaluate', parents=[common], help='在测试集上计算碰撞率与各时域 RMSE')
    p.add_argument('--data', required=True)
    p.add_argument('--model', help='student.json 检查点；缺省时只评估基线')
    p.add_argument('--baseline', choices=['cv'], help='同时评估匀速基线并输出对比表')

    p = sub.add_parser('cpm-solve', parents=[common], help='求解高斯混合之间的 KL 上界')
    p.add_argument('--p', required=True, help='初始混合 P 的 JSON 文件')
    p.add_argument('--q', required=True, help='目标混合 Q 的 JSON 文件')
    p.add_argument('--mc-samples', type=int, help='蒙特卡洛校验的样本数，≤1 时跳过')

    p = sub.add_parser('plot-data', parents=[common], help='导出逐帧混合责任度序列')
    p.add_argument('--teacher', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--split', choices=['train', 'test', 'all'], default='test')

    p = sub.add_parser('convert', parents=[common], help='把 CSV 轨迹转换为 JSONL 数据集')
    p.add_argument('--csv', required=True)

    p = sub.add_parser('rerun', help='按 manifest 重跑一次任务')
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', help='新的输出目录，默认沿用 manifest 中的目录')
    return parser


def _options(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in _CONFIG_ARGS}


def rerun_from_manifest(path: str, out: Optional[str] = None) -> Dict[str, Any]:
    """用 manifest 中的配置快照和参数重新执行同一任务"""
    manifest = load_manifest(path)
    config = load_run_config(path)
    return run_pipeline_task(manifest['command'], rerun_options(manifest, out), config)


def _dispatch(args: argparse.Namespace) -> Dict[str, Any]:
    if args.command == 'rerun':
        return rerun_from_manifest(args.manifest, args.out)
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides['seed'] = args.seed
    config = load_run_config(args.config, overrides)
    return run_pipeline_task(args.command, _options(args), config)


def run(argv: Optional[List[str]] = None) -> int:
    """
    解析命令行并执行

    Args:
        argv: 参数列表，默认 sys.argv[1:]

    Returns:
        退出码
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    try:
        result = _dispatch(args)
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"配置加载失败: {str(e)}")
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"执行失败: {str(e)}")
        print(str(e), file=sys.stderr)
        return 2

    if not result['success']:
        print(result['message'], file=sys.stderr)
        return result.get('exit_code', 2)
    for path in result['artifacts']:
        print(path)
    return 0
