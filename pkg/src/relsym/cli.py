"""Command-line driver for the pipeline stages.

Every stage reads and writes files under the configured work directory;
``--in``/``--out`` override the default file for that stage.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import induce, pddl, sim, symbols, train
from .config import ConfigError, PipelineConfig, load_config, parse_overrides
from .evaluate import planning_eval, success_by_objects, success_table
from .neural import load_checkpoint, save_checkpoint
from .plan import FOUND, UNSOLVABLE, Plan, ground, make_problem_pairs, search, validate_plan

log = logging.getLogger("relsym")

DEFAULT_FILES = {
    "collect": (None, "dataset.jsonl"),
    "train": ("dataset.jsonl", "model.npz"),
    "symbolize": ("dataset.jsonl", "symbolic.jsonl"),
    "induce": ("symbolic.jsonl", "operators.json"),
    "emit": ("operators.json", "domain.pddl"),
    "plan": ("operators.json", "plan.txt"),
    "eval": ("dataset.jsonl", "report.tsv"),
}


class StageError(RuntimeError):
    pass


def _paths(cfg: PipelineConfig, args, stage: str) -> tuple[Path | None, Path]:
    default_in, default_out = DEFAULT_FILES[stage]
    src = Path(args.inp) if getattr(args, "inp", None) else (cfg.path(default_in) if default_in else None)
    dst = Path(args.out) if getattr(args, "out", None) else cfg.path(default_out)
    if src is not None and not src.exists():
        raise StageError(f"{stage}: input file {src} does not exist")
    dst.parent.mkdir(parents=True, exist_ok=True)
    return src, dst


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {what}: {path}")
    return path


def _splits(cfg: PipelineConfig, path: Path):
    return sim.split_dataset(sim.load_dataset(path), cfg.split)


def cmd_collect(cfg: PipelineConfig, args) -> str:
    _, out = _paths(cfg, args, "collect")
    data = sim.collect_dataset(cfg.n_samples, cfg.seed, (cfg.min_objects, cfg.max_objects),
                               cfg.episode_length)
    sim.save_dataset(out, data)
    noops = sum(1 for t in data if not np.any(t.effects))
    return f"collect: {len(data)} transitions ({noops} without effect) -> {out}"


def cmd_train(cfg: PipelineConfig, args) -> str:
    src, out = _paths(cfg, args, "train")
    tr, va, te = _splits(cfg, src)
    metrics = out.with_suffix(".metrics.jsonl")
    result = train.train(tr, cfg.train_config(), ablation=cfg.ablation, val_set=va,
                         metrics_path=metrics)
    save_checkpoint(out, result.model)
    test = train.mse(result.model, te) if te else float("nan")
    return (f"train: {cfg.ablation} {cfg.epochs} epochs, val {result.final_val_mse:.4f}, "
            f"test {test:.4f} -> {out}")


def _model_path(cfg: PipelineConfig, args) -> Path:
    return _require(Path(args.model) if getattr(args, "model", None) else cfg.path("model.npz"),
                    "model checkpoint")


def cmd_symbolize(cfg: PipelineConfig, args) -> str:
    src, out = _paths(cfg, args, "symbolize")
    model = load_checkpoint(_model_path(cfg, args))
    tr, _, _ = _splits(cfg, src)
    records = symbols.symbolize_dataset(model, tr)
    symbols.save_symbolic(out, records, model.cfg.d_k, model.cfg.heads)
    return f"symbolize: {len(records)} training transitions -> {out}"


def cmd_induce(cfg: PipelineConfig, args) -> str:
    src, out = _paths(cfg, args, "induce")
    records = symbols.load_symbolic(src)
    groups = induce.group_samples(records)
    ops = induce.induce_operators(records, cfg.min_support, groups)
    induce.save_operators(out, ops)
    empty = sum(op.is_empty for op in ops)
    return (f"induce: {len(groups)} groups, {len(ops)} operators with support >= "
            f"{cfg.min_support} ({empty} empty), aliasing {induce.aliasing_rate(groups):.3f} -> {out}")


def cmd_emit(cfg: PipelineConfig, args) -> str:
    src, out = _paths(cfg, args, "emit")
    ops = induce.load_operators(src)
    out.write_text(pddl.emit_domain(ops))
    return f"emit: {len(ops)} action schemas -> {out}"


def _external_plan(cfg: PipelineConfig, domain_text: str, problem_text: str, actions) -> Plan:
    """Run ``planner_cmd`` on temporary PDDL files and map its steps to ground actions."""
    by_name = {(a.name.lower(),) + tuple(f"o{o}" for o in a.args): a for a in actions}
    with tempfile.TemporaryDirectory() as tmp:
        domain, problem, plan_file = (Path(tmp) / n for n in ("domain.pddl", "problem.pddl", "plan"))
        domain.write_text(domain_text)
        problem.write_text(problem_text)
        cmd = cfg.planner_cmd.format(domain=domain, problem=problem, plan=plan_file)
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True,
                                  timeout=cfg.timeout_s, cwd=tmp)
        except subprocess.TimeoutExpired:
            return Plan("Timeout")
        text = plan_file.read_text() if plan_file.exists() else proc.stdout
    steps = pddl.parse_plan(text)
    if not steps:
        return Plan(UNSOLVABLE)
    try:
        return Plan(FOUND, [by_name[s] for s in steps])
    except KeyError as exc:
        raise StageError(f"external planner returned unknown step {exc}") from None


def cmd_plan(cfg: PipelineConfig, args) -> str:
    """Plan one generated problem pair and replay it in the simulator."""
    src, out = _paths(cfg, args, "plan")
    ops = induce.load_operators(src)
    model = load_checkpoint(_model_path(cfg, args))
    pair = make_problem_pairs(1, args.objects, args.actions, cfg.seed)[0]
    init = symbols.symbolize_world(model, pair.init)
    goal = symbols.symbolize_world(model, pair.goal)
    problem_text = pddl.emit_problem(init, goal, sim.contact_graph(pair.goal))
    out.with_suffix(".problem.pddl").write_text(problem_text)
    if cfg.planner_cmd:
        actions = ground(ops, list(pair.init.ids))
        plan = _external_plan(cfg, pddl.emit_domain(ops), problem_text, actions)
    else:
        init_atoms = init.atoms()
        goal_atoms = pddl.goal_atoms(goal, sim.contact_graph(pair.goal))
        plan = search(init_atoms, goal_atoms, ground(ops, list(pair.init.ids), init_atoms),
                      timeout_s=cfg.timeout_s, backend=cfg.backend or None)
    verdict = validate_plan(pair.init, plan, pair.goal, cfg.tol_cm) if plan.found else None
    text = plan.to_text()
    if verdict is not None:
        text += f"; replay success={verdict.success} max_error_cm={verdict.max_error:.3f}\n"
    out.write_text(text)
    detail = f", replay {'ok' if verdict.success else 'failed'}" if verdict else ""
    return f"plan: {plan.status}, {len(plan)} steps{detail} -> {out}"


def cmd_eval(cfg: PipelineConfig, args) -> str:
    """Effect MSE, rollout error and the planning success table."""
    src, out = _paths(cfg, args, "eval")
    model = load_checkpoint(_model_path(cfg, args))
    ops_path = Path(args.operators) if getattr(args, "operators", None) else cfg.path("operators.json")
    ops = induce.load_operators(_require(ops_path, "operator file"))
    _, _, te = _splits(cfg, src)
    lines = [f"# effect_mse\t{train.mse(model, te):.4f}"]
    try:
        curve = train.rollout_error(model, te, cfg.rollout_horizon)
        lines.append("# rollout_cumulative\t" + "\t".join(f"{v:.4f}" for v in curve))
    except ValueError as exc:
        lines.append(f"# rollout_cumulative\tunavailable ({exc})")
    results = planning_eval(model, ops, cfg.object_counts(), cfg.action_counts(), cfg.eval_pairs,
                            cfg.seed, cfg.timeout_s, cfg.tol_cm, cfg.workers, cfg.backend or None)
    out.write_text("\n".join(lines) + "\n" + success_table(results))
    rates = ", ".join(f"{n} objects {r:.2f}" for n, r in success_by_objects(results).items())
    return f"eval: planning success {rates} -> {out}"


def cmd_pipeline(cfg: PipelineConfig, args) -> str:
    summaries = []
    for stage in (cmd_collect, cmd_train, cmd_symbolize, cmd_induce, cmd_emit, cmd_plan, cmd_eval):
        line = stage(cfg, args)
        print(line)
        summaries.append(line)
    return f"pipeline: {len(summaries)} stages done in {cfg.workdir}"


COMMANDS = {
    "collect": cmd_collect, "train": cmd_train, "symbolize": cmd_symbolize,
    "induce": cmd_induce, "emit": cmd_emit, "plan": cmd_plan, "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of 'key = value' overrides")
    common.add_argument("--profile", choices=["paper", "desk"], default="desk")
    common.add_argument("--seed", type=int)
    common.add_argument("--workdir", help="directory for stage files")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="single config override (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="relsym", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name not in ("pipeline",):
            if name != "collect":
                p.add_argument("--in", dest="inp", help="stage input file")
            p.add_argument("--out", help="stage output file")
        if name in ("symbolize", "plan", "eval"):
            p.add_argument("--model", help="model checkpoint")
        if name == "eval":
            p.add_argument("--operators", help="operator file")
        if name in ("plan", "pipeline"):
            p.add_argument("--objects", type=int, default=3, help="objects in the planning problem")
            p.add_argument("--actions", type=int, default=2, help="scrambling actions")
    return parser


def _config_from_args(args) -> PipelineConfig:
    overrides = parse_overrides("\n".join(args.set), "--set") if args.set else {}
    overrides.update(seed=args.seed, workdir=args.workdir)
    return load_config(args.profile, args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
        print(COMMANDS[args.command](cfg, args))
    except (ConfigError, StageError, pddl.PddlError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except train.TrainingDiverged as exc:
        if exc.last_good is not None:
            save_checkpoint(Path(cfg.workdir) / "model.last_good.npz", exc.last_good)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
