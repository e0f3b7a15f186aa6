#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行入口
train / eval / embed / curves / gradcheck / compare 六个子命令。
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from .checkpoint import describe_checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, parse_config, resolve_threads
from .embedding import centroid_purity, pca_project
from .evaluation import EvalReport, comparison_table, evaluate_model
from .export import CsvExporter, embedding_matrix, emit_curves, export_embeddings, support_frame, task_description
from .gradcheck import run_suites
from .meta import MetaModel, from_checkpoint, to_checkpoint, train
from .taskgen import StreamPurpose, sample_dataset, sample_task_in_mode, task_stream

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"
TRAIN_LOG_FILE = "train_log.csv"
EVAL_REPORT_FILE = "eval_report.json"
EMBEDDINGS_FILE = "embeddings.csv"
PCA_FILE = "pca.csv"
CURVES_FILE = "curves.csv"
SUPPORT_FILE = "support.csv"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 配置文件路径（默认使用内置默认值）")
    common.add_argument("--seed", type=int, help="随机种子（覆盖配置文件中的 distribution.seed）")
    common.add_argument("--out", default="out", help="输出目录（默认: out）")
    common.add_argument(
        "--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别"
    )

    parser = argparse.ArgumentParser(prog="modalmeta", description="多模态元学习（MuMoMAML）回归实验工具")
    subparsers = parser.add_subparsers(dest="command", help="命令")

    parser_train = subparsers.add_parser("train", parents=[common], help="元训练并保存检查点与训练日志")
    parser_train.add_argument("--progress", action="store_true", help="显示进度条")
    parser_train.add_argument("--resume", help="从已有检查点继续训练")

    parser_eval = subparsers.add_parser("eval", parents=[common], help="在留出任务上评估检查点")
    parser_eval.add_argument("--checkpoint", required=True, help="检查点文件路径")
    parser_eval.add_argument("--tasks", type=int, help="留出任务数（默认取 meta.eval_tasks）")

    parser_embed = subparsers.add_parser("embed", parents=[common], help="导出任务嵌入与 PCA 坐标")
    parser_embed.add_argument("--checkpoint", required=True, help="检查点文件路径")
    parser_embed.add_argument("--tasks", type=int, default=500, help="任务数（默认500）")

    parser_curves = subparsers.add_parser("curves", parents=[common], help="导出某一任务的拟合曲线")
    parser_curves.add_argument("--checkpoint", required=True, help="检查点文件路径")
    parser_curves.add_argument("--mode", type=int, default=0, help="任务模态编号（默认0）")
    parser_curves.add_argument("--prior", action="store_true", help="追加未调制先验列")

    parser_grad = subparsers.add_parser("gradcheck", parents=[common], help="有限差分梯度检验")
    parser_grad.add_argument(
        "--corrupt-gradient", type=float, default=1.0, help="把解析梯度乘以该因子（反例对照，默认1）"
    )

    parser_compare = subparsers.add_parser("compare", parents=[common], help="合并多个评估报告为一张对照表")
    parser_compare.add_argument("reports", nargs="+", help="eval_report.json 文件路径")
    return parser


def _resolve_config(args: argparse.Namespace, fallback: Optional[dict] = None) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    elif fallback is not None:
        config = parse_config(fallback, "checkpoint")
    else:
        config = ExperimentConfig()
    return config.with_seed(args.seed)


def _load_model(path: str):
    checkpoint = load_checkpoint(path)
    info = describe_checkpoint(checkpoint)
    print(f"✓ 已加载检查点: {path} ({info['trainer']}/{info['modulation']}, 迭代 {info['iteration']})")
    return checkpoint, from_checkpoint(checkpoint)


def _print_table(frame: pd.DataFrame) -> None:
    print("=" * 60)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print("=" * 60)


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    threads = resolve_threads()
    out = Path(args.out)
    resume = None
    if args.resume:
        _, resume = _load_model(args.resume)
        if resume.model.trainer is not config.meta.trainer or resume.model.kind is not config.meta.modulation:
            raise ConfigError(
                f"检查点 {args.resume} 为 {resume.model.trainer.value}/{resume.model.kind.value}，"
                f"与配置 {config.meta.trainer.value}/{config.meta.modulation.value} 不一致"
            )

    def eval_hook(done: int, model: MetaModel) -> None:
        report = evaluate_model(
            model,
            config.distribution,
            config.meta.eval_tasks,
            config.inner.eval_steps,
            config.inner.alpha,
            config.seed,
            threads=threads,
        )
        print(
            f"  迭代 {done}: 第0步 MSE {report.mse_by_step[0]:.4f}，"
            f"第{report.eval_steps}步 MSE {report.mse_by_step[-1]:.4f}"
        )

    print(f"开始训练: {config.meta.trainer.value}/{config.meta.modulation.value}，{config.meta.iterations} 次迭代")
    result = train(config, threads=threads, eval_hook=eval_hook, progress=args.progress, resume=resume)
    checkpoint_path = save_checkpoint(out / CHECKPOINT_FILE, to_checkpoint(result, config))
    log_path = CsvExporter().export_train_log(result.log, out / TRAIN_LOG_FILE)
    if len(result.log):
        print(f"✓ 最终外循环损失: {result.log.records[-1].mean_loss:.4f}")
    print(f"✓ 检查点: {checkpoint_path}")
    print(f"✓ 训练日志: {log_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint, restored = _load_model(args.checkpoint)
    config = _resolve_config(args, checkpoint.config)
    n_tasks = args.tasks if args.tasks is not None else config.meta.eval_tasks
    report = evaluate_model(
        restored.model,
        config.distribution,
        n_tasks,
        config.inner.eval_steps,
        config.inner.alpha,
        config.seed,
        kind=config.meta.modulation if args.config else None,
        threads=resolve_threads(),
    )
    _print_table(comparison_table([report]))
    steps = pd.DataFrame(
        {"step": range(report.eval_steps + 1), "mse": report.mse_by_step, "mse_clean": report.mse_clean_by_step}
    )
    print(steps.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    path = report.save(Path(args.out) / EVAL_REPORT_FILE)
    print(f"✓ 评估报告: {path}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    checkpoint, restored = _load_model(args.checkpoint)
    config = _resolve_config(args, checkpoint.config)
    out = Path(args.out)
    exporter = CsvExporter()
    frame = export_embeddings(
        restored.model, config.distribution, args.tasks, config.seed, out / EMBEDDINGS_FILE, exporter
    )
    matrix = embedding_matrix(frame)
    labels = frame["mode_index"].to_numpy()
    pca = pca_project(matrix, seed=config.seed)
    if pca.degenerate:
        print("⚠ 嵌入方差为零，PCA 坐标全为零")
    exporter.export_pca(pca, labels, out / PCA_FILE)
    purity = centroid_purity(matrix, labels, n_modes=len(config.distribution.modes))
    print(f"✓ 嵌入: {out / EMBEDDINGS_FILE} ({len(frame)} 行, {matrix.shape[1]} 维)")
    print(f"✓ PCA 坐标: {out / PCA_FILE}")
    print(f"✓ 最近质心纯度: {purity:.4f}")
    return 0


def cmd_curves(args: argparse.Namespace) -> int:
    checkpoint, restored = _load_model(args.checkpoint)
    config = _resolve_config(args, checkpoint.config)
    dist = config.distribution
    rng = task_stream(config.seed, StreamPurpose.CURVES, args.mode)
    task = sample_task_in_mode(dist, args.mode, rng)
    data = sample_dataset(task, dist, rng)
    out = Path(args.out)
    exporter = CsvExporter()
    frame = emit_curves(
        restored.model, task, data, dist, config.inner, out / CURVES_FILE, include_prior=args.prior, exporter=exporter
    )
    exporter.write(support_frame(data), out / SUPPORT_FILE)
    print(f"✓ 任务: {task_description(task)}")
    print(f"✓ 曲线: {out / CURVES_FILE} ({len(frame)} 行, {len(frame.columns)} 列)")
    print(f"✓ 支持集: {out / SUPPORT_FILE}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    results = run_suites(seed=config.seed, corrupt=args.corrupt_gradient)
    failed = 0
    for result in results:
        report = result.report
        mark = "✓" if report.passed else "✗"
        print(
            f"{mark} {result.name}: 最大相对误差 {report.max_rel_error:.3e} "
            f"(容差 {report.tolerance:.0e}, {report.n_entries} 项, 最差 {report.worst_entry})"
        )
        failed += 0 if report.passed else 1
    print("=" * 60)
    if failed:
        print(f"✗ {failed}/{len(results)} 个套件未通过")
        return 1
    print(f"✓ 全部 {len(results)} 个套件通过")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    reports: List[EvalReport] = []
    for path in args.reports:
        try:
            reports.append(EvalReport.load(path))
        except FileNotFoundError:
            raise FileNotFoundError(f"评估报告不存在: {path}")
    _print_table(comparison_table(reports))
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "curves": cmd_curves,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    执行命令行

    Args:
        argv: 参数列表（不含程序名），默认取 sys.argv

    Returns:
        退出码：0 成功，2 配置或用法错误，1 运行时错误
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)
    if not args.command:
        parser.print_help()
        return 2

    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"✗ 配置错误: {e}")
        return 2
    except Exception as e:
        logger.debug("命令执行失败", exc_info=True)
        print(f"✗ {type(e).__name__}: {e}")
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
