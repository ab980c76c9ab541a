"""Subcommand implementations behind the command-line interface."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..runtime import (
    RunConfig,
    RunRecord,
    execute_episode,
    execute_unmodified,
    load_record,
    record_to_dict,
    save_record,
)
from ..stl import horizon, top_conjuncts
from ..synthesis import QTable, load_qtable, save_qtable, synthesize_policy
from .config import ConfigError, ExperimentConfig, load_experiment
from .figures import render_batch_figure
from .stats import write_batch_csv
from .svg import save_trajectory_svg


def _load_cfg(args) -> ExperimentConfig:
    return load_experiment(
        args.config,
        overrides=args.override or (),
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
    )


def _qtable_path(cfg: ExperimentConfig, args) -> Path:
    if getattr(args, "qtable", None):
        return Path(args.qtable)
    return cfg.out_dir / "qtable.bin"


def _check_policy(q: QTable, cfg: ExperimentConfig) -> None:
    scene = cfg.scene
    if (
        q.width != scene.grid.width
        or q.height != scene.grid.height
        or q.heading_count != scene.heading_count
        or q.horizon != horizon(cfg.spec)
        or q.n_conjuncts != len(top_conjuncts(cfg.spec))
    ):
        raise ConfigError("policy file does not match the scene and specification")


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    q, report = synthesize_policy(cfg.scene, cfg.spec, cfg.synthesis)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    qpath = cfg.out_dir / "qtable.bin"
    save_qtable(q, qpath)
    report = dict(report, experiment=cfg.name, spec=cfg.spec_text)
    with open(cfg.out_dir / "synth_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"policy accepted after {report['rounds']} round(s), {report['episodes']} episodes")
    print(f"greedy robustness from start: {report['greedy_robustness']:.4f}")
    print(f"wrote {qpath} ({len(q)} states)")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if args.unmodified:
        record = execute_unmodified(cfg.scene, cfg.spec, cfg.instruction, cfg.surrogate, cfg.run)
        stem = f"run_unmodified_{cfg.run.seed}"
    else:
        q = load_qtable(_qtable_path(cfg, args))
        _check_policy(q, cfg)
        record = execute_episode(cfg.scene, cfg.spec, q, cfg.instruction, cfg.surrogate, cfg.run)
        stem = f"run_{cfg.run.seed}"
    save_record(record, cfg.out_dir / f"{stem}.json")
    save_trajectory_svg(
        cfg.out_dir / f"{stem}.svg",
        cfg.scene,
        record,
        title=f"{cfg.name} seed={cfg.run.seed}",
    )
    verdict = "satisfied" if record.stl_satisfied else "violated"
    done = "done" if record.main_done else "not done"
    print(
        f"specification {verdict} (robustness {record.final_robustness:.4f}); "
        f"main task {done} in {len(record.actions)} steps"
    )
    print(f"wrote {cfg.out_dir / (stem + '.json')} and {cfg.out_dir / (stem + '.svg')}")
    return 0


_WORKER: dict = {}


def _mc_init(payload: dict) -> None:
    _WORKER.update(payload)


def _mc_run(seed: int) -> RunRecord:
    run_cfg = RunConfig(t_max=_WORKER["t_max"], seed=seed, delta=1.0)
    if _WORKER["unmodified"]:
        return execute_unmodified(
            _WORKER["scene"], _WORKER["spec"], _WORKER["instr"], _WORKER["fm"], run_cfg
        )
    return execute_episode(
        _WORKER["scene"], _WORKER["spec"], _WORKER["q"], _WORKER["instr"], _WORKER["fm"], run_cfg
    )


def episode_seeds(master: int, n: int) -> list[int]:
    """Independent per-episode seeds derived from one master seed."""
    return [
        int(np.random.SeedSequence([master, i]).generate_state(1, np.uint64)[0])
        for i in range(n)
    ]


def cmd_montecarlo(args) -> int:
    cfg = _load_cfg(args)
    n = args.runs if args.runs is not None else cfg.n_runs
    if n < 1:
        raise ConfigError("--runs must be positive")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    unmodified = bool(args.unmodified)
    q = None
    if not unmodified:
        q = load_qtable(_qtable_path(cfg, args))
        _check_policy(q, cfg)

    master = cfg.run.seed
    seeds = episode_seeds(master, n)
    payload = {
        "scene": cfg.scene,
        "spec": cfg.spec,
        "q": q,
        "instr": cfg.instruction,
        "fm": cfg.surrogate,
        "t_max": cfg.run.t_max,
        "unmodified": unmodified,
    }
    if args.workers and args.workers > 1:
        chunk = max(1, n // (4 * args.workers))
        with ProcessPoolExecutor(
            max_workers=args.workers, initializer=_mc_init, initargs=(payload,)
        ) as ex:
            records = list(ex.map(_mc_run, seeds, chunksize=chunk))
    else:
        _mc_init(payload)
        records = [_mc_run(s) for s in seeds]

    mode = "unmodified" if unmodified else "shielded"
    csv_path = cfg.out_dir / f"mc_{mode}.csv"
    stats = write_batch_csv(csv_path, records)
    with open(cfg.out_dir / f"mc_{mode}_records.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_dict(r), sort_keys=True) + "\n")
    fig_path = cfg.out_dir / f"mc_{mode}.png"
    render_batch_figure(fig_path, records, stats, title=f"{cfg.name} [{mode}] seed {master}")

    print(f"{mode}: {n} runs from master seed {master}")
    print(f"  specification satisfied: {stats.stl_rate:.1f}%")
    print(f"  main task completed:     {stats.main_rate:.1f}%")
    print(f"  mean fallback steps:     {stats.mean_fallbacks:.2f}")
    print(f"  mean projected steps:    {stats.mean_projected:.2f}")
    print(f"wrote {csv_path} and {fig_path}")
    return 0


def cmd_plot(args) -> int:
    cfg = _load_cfg(args)
    record = load_record(args.record)
    out_path = Path(args.svg) if args.svg else Path(args.record).with_suffix(".svg")
    save_trajectory_svg(out_path, cfg.scene, record, title=Path(args.record).stem)
    print(f"wrote {out_path}")
    return 0
