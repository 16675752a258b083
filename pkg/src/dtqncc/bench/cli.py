"""Command-line entry point: ``dtqncc <subcommand> --config PATH [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import tempfile
from pathlib import Path

from ..agent.checkpoint import load_agent, save
from ..netsim import derive_seed
from ..telemetry import EngineServer
from . import config as config_mod
from .config import ConfigError, EngineConfig, ScenarioConfig
from .experiments import (AXES, EpisodeLog, fairness, fct_csv, fct_experiment, sweep,
                          sweep_csv, train_agent)
from .scenario import make_agent, make_engine, run_scenario, summary_dict, write_outputs

log = logging.getLogger("dtqncc")


def _load_config(args) -> ScenarioConfig:
    cfg = config_mod.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.engine is not None or args.edge_latency_us is not None:
        spec = args.engine or (cfg.engine.mode if cfg.engine.mode == "inproc" else f"socket:{cfg.engine.address}")
        latency = cfg.engine.edge_latency_us if args.edge_latency_us is None else args.edge_latency_us
        try:
            changes["engine"] = EngineConfig.parse(spec, latency)
        except ValueError as exc:
            raise ConfigError("engine", str(exc)) from None
    if args.checkpoint is not None and Path(args.checkpoint).exists():
        changes["checkpoint"] = str(args.checkpoint)
    if args.eval_only:
        changes["learn"] = False
    return cfg.replace(**changes) if changes else cfg


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _print_summary(m) -> None:
    print(f"goodput {m.goodput_bps / 1e6:.3f} Mbps of {m.capacity_bps / 1e6:.3f} Mbps capacity; "
          f"rtt mean {m.rtt_mean_us / 1e3:.2f} ms cv {m.rtt_cv:.3f}; retransmits {m.retransmits}")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "agent.ckpt"
    if args.eval_only:
        if not ckpt.exists():
            raise SystemExit(f"--eval-only needs an existing checkpoint, {ckpt} not found")
        agent = load_agent(ckpt, seed=derive_seed(cfg.seed, "agent"))
    else:
        resume = load_agent(ckpt, seed=derive_seed(cfg.seed, "agent")) if ckpt.exists() else None
        run = train_agent(cfg.replace(checkpoint=None), args.episodes, args.episode_s, seed=cfg.seed,
                          time_budget_s=args.time_budget_s, agent=resume)
        agent = run.agent
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save(ckpt, agent.online, agent.cfg)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "training.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(EpisodeLog.__dataclass_fields__)
            for e in run.episodes:
                w.writerow([repr(v) if isinstance(v, float) else v for v in vars(e).values()])
        print(f"trained {len(run.episodes)} episodes, {agent.updates} updates; checkpoint {ckpt}")
    res = run_scenario(cfg.replace(learn=False), agent=agent, learn=False, out_dir=out)
    _print_summary(res.metrics)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    res = run_scenario(cfg, out_dir=args.out)
    _print_summary(res.metrics)
    if res.metrics.jfi is not None:
        print(f"jfi {res.metrics.jfi:.4f}")
    return 0


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = sweep(cfg, args.axis, args.values, args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows), encoding="utf-8")
    _write_json(out / "summary.json", {"config_sha1": cfg.content_hash(), "config": cfg.to_dict(),
                                       "axis": args.axis, "values": args.values, "reps": args.reps})
    for row in rows:
        print(f"{args.axis}={row[1]} rep {row[3]}: {row[6] / 1e6:.3f} Mbps")
    return 0


def cmd_fct(args) -> int:
    cfg = _load_config(args)
    sizes = [int(s) for s in (args.sizes or cfg.workload.flow_sizes)]
    if not sizes:
        raise SystemExit("no flow sizes: pass --sizes or set workload.flow_sizes")
    stats = fct_experiment(cfg, sizes, args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fct.csv").write_text(fct_csv(stats), encoding="utf-8")
    _write_json(out / "summary.json", {"config_sha1": cfg.content_hash(), "config": cfg.to_dict(),
                                       "fct": {str(k): v for k, v in stats.items()}})
    for size, st in stats.items():
        print(f"{size} B: {st['count']} flows, mean FCT {st['mean_us'] / 1e3:.3f} ms")
    return 0


def cmd_fairness(args) -> int:
    cfg = _load_config(args)
    res = fairness(cfg, competing_cc=args.competing_cc, link=args.link)
    write_outputs(res, args.out)
    m = res.metrics
    print(f"multipath {sum(m.subflow_goodput_bps) / 1e6:.3f} Mbps, competing {m.competing_goodput_bps / 1e6:.3f} Mbps, "
          f"jfi {m.jfi:.4f}" if m.jfi is not None else "jfi undefined (no traffic)")
    return 0


def cmd_replay(args) -> int:
    """Re-run the config echoed in a summary and compare CSV bytes with the originals."""
    summary_path = Path(args.summary)
    original = json.loads(summary_path.read_text(encoding="utf-8"))
    cfg = config_mod.from_dict(original["config"])
    if cfg.content_hash() != original.get("config_sha1"):
        print("config hash mismatch: summary was edited or written by another version", file=sys.stderr)
        return 2
    src_dir = summary_path.parent
    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="dtqncc-replay-"))
    res = run_scenario(cfg, out_dir=out)
    mismatched = []
    for name in ("timeseries.csv", "flows.csv"):
        if (src_dir / name).read_bytes() != (out / name).read_bytes():
            mismatched.append(name)
    if summary_dict(res)["metrics"] != original["metrics"]:
        mismatched.append("summary.json metrics")
    if mismatched:
        print(f"replay differs: {', '.join(mismatched)}")
        return 1
    print(f"replay identical ({out})")
    return 0


def cmd_serve_engine(args) -> int:
    cfg = _load_config(args)
    if not cfg.is_agent:
        raise SystemExit(f"cc {cfg.cc!r} has no decision engine")
    agent = load_agent(cfg.checkpoint, derive_seed(cfg.seed, "agent")) if cfg.checkpoint else make_agent(cfg)
    engine = make_engine(cfg, agent, learn=cfg.learn and not args.eval_only)
    host, _, port = args.listen.rpartition(":")
    server = EngineServer(engine, host or "127.0.0.1", int(port))
    print(f"engine listening on {server.addr}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario YAML file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--engine", help="decision engine: inproc or socket:HOST:PORT")
    common.add_argument("--edge-latency-us", type=int, help="one-way proxy/engine latency in microseconds")
    common.add_argument("--checkpoint", help="agent checkpoint to load (train: path to write)")
    common.add_argument("--eval-only", action="store_true", help="freeze the policy: no learning")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="dtqncc", description="Multipath congestion-control simulator and benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train an agent on randomised scenarios")
    t.add_argument("--episodes", type=int, default=40)
    t.add_argument("--episode-s", type=float, default=10.0)
    t.add_argument("--time-budget-s", type=float)
    t.set_defaults(func=cmd_train)

    sub.add_parser("eval", parents=[common], help="run one scenario").set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="sweep loss, buffer or edge latency")
    s.add_argument("--axis", choices=AXES, required=True)
    s.add_argument("--values", type=_values, required=True, help="comma-separated axis values")
    s.add_argument("--reps", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fct", parents=[common], help="flow completion times for fixed-size flows")
    f.add_argument("--sizes", type=lambda s: [int(v) for v in _values(s)], help="flow sizes in bytes")
    f.add_argument("--reps", type=int)
    f.set_defaults(func=cmd_fct)

    fa = sub.add_parser("fairness", parents=[common], help="compete against a single-path flow")
    fa.add_argument("--competing-cc", choices=("reno", "cubic", "lia"))
    fa.add_argument("--link", type=int)
    fa.set_defaults(func=cmd_fairness)

    r = sub.add_parser("replay", help="re-run a summary's config and check byte-identical outputs")
    r.add_argument("summary", help="summary.json written by eval")
    r.add_argument("--out", help="where to write the re-run (default: a temp dir)")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_replay)

    se = sub.add_parser("serve-engine", parents=[common], help="host the decision engine on a TCP socket")
    se.add_argument("--listen", default="127.0.0.1:7700", help="HOST:PORT to bind")
    se.set_defaults(func=cmd_serve_engine)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
