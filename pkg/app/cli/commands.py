"""Subcommands of the `lightcast` command line."""

import argparse
import asyncio
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from app.core.config import Settings, get_settings
from app.core.exceptions import ConfigurationError
from app.core.logging import setup_logging
from app.models.irl import RewardModel
from app.models.schemas import LightingCommand, PipelineConfig, RunConfig, Scenario, TrainConfig
from app.services.dataset_service import gen_demos
from app.services.forecast_service import evaluate, get_forecaster, split_demo, write_metrics
from app.services.gridmap_service import features, load_map
from app.services.irl_service import train
from app.services.lamp_service import get_lamp_client, get_lamp_server
from app.services.mdp_service import build_mdp
from app.services.pipeline_service import run_scenario
from app.services.profile_service import profile_store_load
from app.services.selfcheck_service import run_selfcheck
from app.cli.error_handlers import run_command
from app.utils.checkpoint import format_checkpoint, load_checkpoint
from app.utils.io import atomic_write_text
from app.utils.reward_spec import parse_reward_spec
from app.utils.trajectory_io import format_trajectories, read_trajectories

logger = logging.getLogger(__name__)


def _option(config: RunConfig, name: str):
    return config.options.get(name)


def _out(config: RunConfig, name: str) -> Path:
    return Path(config.out_dir) / name


def _load_house(config: RunConfig):
    if not config.map_path:
        raise ConfigurationError(f"{config.subcommand} needs --map")
    grid = load_map(config.map_path, cell_size=float(_option(config, "cell_size")))
    mdp = build_mdp(grid, horizon=config.horizon)
    field = features(grid)
    return grid, mdp, field.for_states(mdp), field.names


def _required(config: RunConfig, name: str) -> str:
    value = _option(config, name)
    if value is None:
        raise ConfigurationError(f"{config.subcommand} needs --{name.replace('_', '-')}")
    return str(value)


# --- subcommands ---------------------------------------------------------------

def cmd_gen_demos(config: RunConfig) -> int:
    """Sample synthetic demonstrations from a ground-truth reward spec."""
    grid, mdp, phi, names = _load_house(config)
    expression = _option(config, "reward_expr")
    if expression is None:
        expression = Path(_required(config, "reward")).read_text(encoding="utf-8")
    model = parse_reward_spec(str(expression), names)
    max_length = _option(config, "max_length")
    demos = gen_demos(
        grid, mdp, phi, model,
        count=int(_option(config, "count")),
        seed=config.seed,
        horizon=config.horizon,
        min_length=int(_option(config, "min_length")),
        max_length=int(max_length) if max_length is not None else None,
    )
    path = atomic_write_text(_out(config, "demos.csv"), format_trajectories(demos, mdp))
    print(f"wrote {len(demos)} demonstrations to {path}")
    return 0


def cmd_train(config: RunConfig) -> int:
    """Fit a reward model to demonstrations; writes the checkpoint and the loss curve."""
    _, mdp, phi, _ = _load_house(config)
    demos = read_trajectories(_required(config, "demos"), mdp)
    train_config = TrainConfig(
        learning_rate=float(_option(config, "learning_rate")),
        epochs=int(_option(config, "epochs")),
        batch=int(_option(config, "batch")),
        seed=config.seed,
        horizon=config.horizon,
        kind=str(_option(config, "kind")),
        hidden=int(_option(config, "hidden")),
    )
    result = train(demos, mdp, phi, train_config)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", "mean_log_likelihood"])
    for epoch, value in enumerate(result.log_likelihoods, start=1):
        writer.writerow([epoch, format(value, ".17g")])
    atomic_write_text(_out(config, "loss.csv"), buffer.getvalue())
    path = atomic_write_text(_out(config, "model.ckpt"), format_checkpoint(result.model))
    print(f"wrote {path} (final mean log-likelihood {result.log_likelihoods[-1]:.4f})")
    return 0


def cmd_eval(config: RunConfig) -> int:
    """MinADE/MinFDE of the trained model on held-out demonstrations."""
    grid, mdp, phi, _ = _load_house(config)
    model: RewardModel = load_checkpoint(_required(config, "checkpoint"))
    demos = read_trajectories(_required(config, "demos"), mdp)
    overrides = dict(
        samples=int(_option(config, "samples")),
        k_values=list(_option(config, "k")),
        seed=config.seed,
        horizon=config.horizon,
        history_steps=int(_option(config, "history_steps")),
        points=int(_option(config, "points")),
    )
    settings = get_settings()
    forecaster = get_forecaster(settings, grid, mdp, model, phi, **overrides)
    forecast_config = forecaster.config
    pairs = [split_demo(d, forecast_config.history_steps, forecast_config.points, mdp) for d in demos]

    rows = evaluate(pairs, forecaster, forecast_config.k_values, forecast_config.samples, config.seed)
    atomic_write_text(_out(config, "metrics.csv"), write_metrics(rows))
    sys.stdout.write(write_metrics(rows))
    if _option(config, "baseline"):
        baseline = evaluate(pairs, get_forecaster(settings, grid, mdp, None, None, **overrides),
                            forecast_config.k_values, forecast_config.samples, config.seed)
        atomic_write_text(_out(config, "baseline_metrics.csv"), write_metrics(baseline))
    return 0


async def stream_commands(commands: Sequence[LightingCommand], address: str, settings: Settings) -> None:
    """Send commands to the lamp controller in order over one connection."""
    async with get_lamp_client(settings, address) as client:
        for command in commands:
            await client.send(command)


def load_scenario(path: str, settings: Settings) -> Scenario:
    """Read a scenario; cadence and thresholds it leaves out come from the settings."""
    scenario = Scenario.model_validate_json(Path(path).read_text(encoding="utf-8"))
    update = {}
    if "frame_interval" not in scenario.model_fields_set:
        update["frame_interval"] = settings.frame_interval
    if "pipeline" not in scenario.model_fields_set:
        update["pipeline"] = PipelineConfig(
            forecast_stride=settings.forecast_stride,
            preempt_threshold=settings.preempt_threshold,
            empty_timeout=settings.empty_timeout,
        )
    return scenario.model_copy(update=update) if update else scenario


def cmd_simulate(config: RunConfig) -> int:
    """Replay a scenario; writes the event log and latency report and drives the lamps."""
    grid, mdp, phi, _ = _load_house(config)
    scenario = load_scenario(_required(config, "scenario"), get_settings())
    profiles = profile_store_load(_required(config, "profiles"))
    forecaster = None
    if _option(config, "checkpoint"):
        model = load_checkpoint(str(_option(config, "checkpoint")))
        forecaster = get_forecaster(get_settings(), grid, mdp, model, phi, samples=int(_option(config, "samples")),
                                    seed=config.seed, horizon=config.horizon)

    run = run_scenario(scenario, grid, mdp, profiles, forecaster)
    atomic_write_text(_out(config, "events.log"), run.log_text)
    atomic_write_text(_out(config, "latency.json"), run.report.model_dump_json(indent=2) + "\n")
    if not _option(config, "no_lamp"):
        asyncio.run(stream_commands([c for _, c in run.commands], str(_option(config, "lamp_addr")), get_settings()))
    print(f"{len(run.entries)} log entries, {len(run.commands)} commands, mean episode {run.report.mean_ms} ms")
    return 0


def cmd_serve_lamp(config: RunConfig) -> int:
    """Run the lamp controller simulator in the foreground."""
    server = get_lamp_server(get_settings(), str(_option(config, "lamp_addr")))

    async def serve() -> None:
        await server.start()
        print(f"lamp simulator listening on {server.address}", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(serve())
    except KeyboardInterrupt:
        logger.info("Lamp simulator stopped", extra={"applied": len(server.applied)})
    return 0


def cmd_selfcheck(config: RunConfig, gradient_fn: Optional[Callable] = None) -> int:
    """Enumeration, gradient and invariant checks; nonzero exit on any failure."""
    kwargs = {"gradient_fn": gradient_fn} if gradient_fn is not None else {}
    report = run_selfcheck(quick=bool(_option(config, "quick")), seed=config.seed, **kwargs)
    sys.stdout.write(report.format())
    return 0 if report.passed else 1


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "serve-lamp": cmd_serve_lamp,
    "selfcheck": cmd_selfcheck,
}


# --- argument parsing -------------------------------------------------------------

def _k_values(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects comma separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("--k values must be positive")
    return values


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--map", dest="map_path", help="House map file")
    common.add_argument("--seed", type=int, default=settings.default_seed)
    common.add_argument("--horizon", type=int, default=settings.horizon, help="Planning horizon N")
    common.add_argument("--out", dest="out_dir", default=settings.output_dir, help="Output directory")
    common.add_argument("--cell-size", type=float, default=settings.cell_size, help="Metres per cell")
    common.add_argument("--log-level", default=settings.log_level)

    parser = argparse.ArgumentParser(prog=settings.app_name, description="Personalized lighting from learned paths")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-demos", parents=[common], help="Sample synthetic demonstrations")
    p.add_argument("--reward", help="Ground-truth reward spec file")
    p.add_argument("--reward-expr", help="Ground-truth reward spec given inline")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--min-length", type=int, default=settings.demo_min_length, help="Minimum cells per demo")
    p.add_argument("--max-length", type=int, default=settings.demo_max_length, help="Maximum cells per demo (default: unbounded)")

    p = sub.add_parser("train", parents=[common], help="Learn a reward model")
    p.add_argument("--demos", help="Trajectory file")
    p.add_argument("--kind", choices=["linear", "mlp"], default=settings.model_kind)
    p.add_argument("--epochs", type=int, default=settings.epochs)
    p.add_argument("--learning-rate", type=float, default=settings.learning_rate)
    p.add_argument("--batch", type=int, default=settings.batch)
    p.add_argument("--hidden", type=int, default=settings.hidden_units)

    p = sub.add_parser("eval", parents=[common], help="Score forecasts with MinADE/MinFDE")
    p.add_argument("--checkpoint", help="Model checkpoint")
    p.add_argument("--demos", help="Held-out trajectory file")
    p.add_argument("--k", type=_k_values, default=list(settings.k_values), help="Comma separated K values")
    p.add_argument("--samples", type=int, default=settings.forecast_samples)
    p.add_argument("--history-steps", type=int, default=settings.history_steps)
    p.add_argument("--points", type=int, default=settings.resample_points, help="Points per resampled path")
    p.add_argument("--baseline", action="store_true", help="Also score the uniform-random baseline")

    p = sub.add_parser("simulate", parents=[common], help="Replay a scenario through the lighting pipeline")
    p.add_argument("--scenario", help="Scenario file")
    p.add_argument("--profiles", help="Profile store")
    p.add_argument("--checkpoint", help="Model checkpoint enabling forecasts")
    p.add_argument("--samples", type=int, default=settings.forecast_samples)
    p.add_argument("--lamp-addr", default=settings.lamp_addr)
    p.add_argument("--no-lamp", action="store_true", help="Do not stream commands to a lamp controller")

    p = sub.add_parser("serve-lamp", parents=[common], help="Run the lamp controller simulator")
    p.add_argument("--lamp-addr", default=settings.lamp_addr)

    p = sub.add_parser("selfcheck", parents=[common], help="Run the numerical self-checks")
    p.add_argument("--quick", action="store_true", help="Fewer instances")
    return parser


def parse_run_config(argv: Optional[Sequence[str]], settings: Settings) -> RunConfig:
    args = vars(build_parser(settings).parse_args(argv))
    core = {key: args.pop(key) for key in ("subcommand", "map_path", "seed", "horizon", "out_dir")}
    return RunConfig(**core, options=args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    settings = get_settings()
    config = parse_run_config(argv, settings)
    setup_logging(str(config.options.get("log_level") or settings.log_level), settings.log_format)
    logger.info(
        f"Starting {settings.app_name} v{settings.app_version} {config.subcommand}",
        extra={"seed": config.seed, "horizon": config.horizon, "out_dir": config.out_dir},
    )
    return run_command(COMMANDS[config.subcommand], config)
