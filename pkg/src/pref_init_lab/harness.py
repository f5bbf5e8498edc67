"""Configuration, multi-seed sweeps, aggregation and artifact export."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .nn_core import InitScheme, save_checkpoint
from .pbrl_loop import LoopConfig, RunMetrics, run_experiment

log = logging.getLogger(__name__)

OUT_ENV_VAR = "PREF_INIT_LAB_OUT"
DEFAULT_ARMS = [
    InitScheme.DATA_DRIVEN,
    InitScheme.KAIMING_UNIFORM,
    InitScheme.XAVIER_UNIFORM,
    InitScheme.ORTHONORMAL,
    InitScheme.ZEROS,
    InitScheme.ONES,
]
# LoopConfig fields that the sweep, not the user, controls
_PER_RUN_KEYS = {"init_scheme"}


class ConfigError(ValueError):
    """Invalid or unreadable configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    loop: LoopConfig = field(default_factory=LoopConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    arms: list[InitScheme] = field(default_factory=lambda: list(DEFAULT_ARMS))
    out_dir: str = "runs"
    workers: int = 1

    @property
    def grid_size(self) -> int:
        return self.loop.grid_size

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds: must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be distinct")
        if not self.arms:
            raise ConfigError("arms: must be nonempty")
        if len(set(self.arms)) != len(self.arms):
            raise ConfigError("arms: must be distinct")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")

    def loop_for(self, arm: InitScheme) -> LoopConfig:
        d = self.loop.to_dict()
        d["init_scheme"] = arm
        return LoopConfig(**d)

    def to_flat(self) -> dict[str, Any]:
        d = {k: v for k, v in self.loop.to_dict().items() if k not in _PER_RUN_KEYS}
        d["seeds"] = list(self.seeds)
        d["arms"] = [a.value for a in self.arms]
        d["out_dir"] = self.out_dir
        d["workers"] = self.workers
        return d


def _loop_fields() -> dict[str, Any]:
    return {f.name: f for f in fields(LoopConfig) if f.name not in _PER_RUN_KEYS}


def _coerce(key: str, value: Any, default: Any) -> Any:
    def bad(expected: str):
        return ConfigError(f"{key}: expected {expected}, got {value!r}")

    if key == "seeds":
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        try:
            out = [int(v) for v in value]
        except (TypeError, ValueError):
            raise bad("a list of integers") from None
        if any(isinstance(v, float) and not float(v).is_integer() for v in value):
            raise bad("a list of integers")
        return out
    if key == "arms":
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        try:
            return [InitScheme.parse(v) for v in value]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"arms: {exc}") from None
    if key in ("base_init",):
        try:
            return InitScheme.parse(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if key == "out_dir":
        return str(value)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise bad("a boolean")
    if isinstance(default, int) or key in ("max_steps", "total_env_steps"):
        if value is None and key in ("max_steps", "total_env_steps"):
            return None
        if isinstance(value, bool):
            raise bad("an integer")
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise bad("an integer") from None
        if not f.is_integer():
            raise bad("an integer")
        return int(f)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise bad("a number")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise bad("a number") from None
    if isinstance(default, str):
        return str(value)
    return value


def parse_config(path: str | os.PathLike | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Merge defaults < JSON file < overrides into a validated config.

    Keys are flat; dashes and underscores are interchangeable
    (``grid-size`` == ``grid_size``).  Overrides whose value is ``None`` are
    ignored.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config: file not found: {p}")
        text = p.read_text()
        if text.strip():
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config: malformed JSON in {p}: {exc}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"config: top level of {p} must be an object")
            raw.update({k.replace("-", "_"): v for k, v in data.items()})
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k.replace("-", "_")] = v

    loop_defaults = LoopConfig()
    loop_fields = _loop_fields()
    exp_defaults = ExperimentConfig()
    exp_keys = {"seeds", "arms", "out_dir", "workers"}
    unknown = sorted(set(raw) - set(loop_fields) - exp_keys)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")

    loop_kwargs = {}
    for key, value in raw.items():
        if key in loop_fields:
            loop_kwargs[key] = _coerce(key, value, getattr(loop_defaults, key))
    try:
        loop = LoopConfig(**loop_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cfg = ExperimentConfig(
        loop=loop,
        seeds=_coerce("seeds", raw["seeds"], None) if "seeds" in raw else exp_defaults.seeds,
        arms=_coerce("arms", raw["arms"], None) if "arms" in raw else exp_defaults.arms,
        out_dir=str(raw.get("out_dir", os.environ.get(OUT_ENV_VAR, exp_defaults.out_dir))),
        workers=_coerce("workers", raw["workers"], 1) if "workers" in raw else 1,
    )
    cfg.validate()
    return cfg


def write_config(config: ExperimentConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(config.to_flat(), indent=2, sort_keys=True) + "\n")


@dataclass
class ArmSummary:
    arm: str
    eval_steps: list[int]
    mean: list[float]
    std: list[float]
    final_mean: float
    final_std: float
    final_returns: list[float]
    oracle_label_counts: list[int]
    seeds: list[int]
    complete: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_mean": self.final_mean,
            "final_std": self.final_std,
            "final_returns": self.final_returns,
            "oracle_label_count": int(sum(self.oracle_label_counts)),
            "oracle_label_counts": self.oracle_label_counts,
            "seeds": self.seeds,
            "complete": self.complete,
        }


@dataclass
class SweepSummary:
    grid_size: int
    arms: dict[str, ArmSummary]
    runs: list[RunMetrics] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {"grid_size": self.grid_size, "arms": {k: v.to_dict() for k, v in self.arms.items()}}


def aggregate(runs: Sequence[RunMetrics], arms: Iterable[str], seeds: Sequence[int], grid_size: int) -> SweepSummary:
    """Per-arm mean and population std (ddof=0) of return at every eval point."""
    out = {}
    for arm in arms:
        arm_runs = [r for r in runs if r.arm == arm]
        valid = [r for r in arm_runs if r.valid]
        complete = len(valid) == len(seeds) and len({tuple(r.eval_steps) for r in valid}) <= 1
        if valid and complete:
            curves = np.array([r.eval_returns for r in valid])
            steps = list(valid[0].eval_steps)
            mean, std = curves.mean(axis=0), curves.std(axis=0)
            final = [float(c) for c in curves[:, -1]]
            final_mean, final_std = float(mean[-1]), float(std[-1])
        else:
            steps, mean, std, final = [], np.zeros(0), np.zeros(0), [r.final_return for r in valid]
            final_mean = final_std = float("nan")
        out[arm] = ArmSummary(
            arm,
            steps,
            [float(v) for v in mean],
            [float(v) for v in std],
            final_mean,
            final_std,
            final,
            [r.oracle_label_count for r in valid],
            [r.seed for r in valid],
            complete,
        )
    return SweepSummary(grid_size, out, list(runs))


def _run_one(args: tuple[LoopConfig, int]) -> RunMetrics:
    cfg, seed = args
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return run_experiment(cfg, seed)
    with threadpool_limits(1):
        return run_experiment(cfg, seed)


def run_sweep(config: ExperimentConfig, export: bool = True) -> SweepSummary:
    """Every (arm, seed) run, aggregated; artifacts go to ``config.out_dir``."""
    config.validate()
    jobs = [(config.loop_for(arm), seed) for arm in config.arms for seed in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(job) for job in jobs]
    for r in runs:
        log.info("%s seed %d: final return %.3f (%.1fs)%s", r.arm, r.seed, r.final_return, r.wall_clock_seconds,
                 "" if r.valid else f" INVALID: {r.error}")
    summary = aggregate(runs, [a.value for a in config.arms], config.seeds, config.grid_size)
    if export:
        export_artifacts(runs, summary, config.out_dir)
    return summary


def fmt(x: float) -> str:
    """Shortest round-trip decimal form."""
    return repr(float(x))


def heatmap_csv(heatmap: np.ndarray) -> str:
    return "".join(",".join(fmt(v) for v in row) + "\n" for row in heatmap)


def heatmap_pgm(heatmap: np.ndarray) -> bytes:
    """8-bit binary PGM; [-1, 1] maps linearly onto [0, 255] (floored)."""
    h = np.asarray(heatmap, dtype=np.float64)
    pixels = np.clip(np.floor((h + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)
    rows, cols = pixels.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    cols, rows = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(rows, cols)


def curve_csv(arm: ArmSummary) -> str:
    lines = ["env_step,mean_return,std_return"]
    lines += [f"{s},{fmt(m)},{fmt(d)}" for s, m, d in zip(arm.eval_steps, arm.mean, arm.std)]
    return "\n".join(lines) + "\n"


def run_curve_csv(run: RunMetrics) -> str:
    lines = ["env_step,return"] + [f"{s},{fmt(r)}" for s, r in zip(run.eval_steps, run.eval_returns)]
    return "\n".join(lines) + "\n"


def _write(path: Path, data: str | bytes) -> None:
    try:
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def export_artifacts(runs: Sequence[RunMetrics], summary: SweepSummary, out_dir: str | os.PathLike) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = []

    def put(name: str, data: str | bytes) -> None:
        path = out / name
        _write(path, data)
        written.append(path)

    for arm in summary.arms.values():
        put(f"curve_{arm.arm}.csv", curve_csv(arm))
    for run in runs:
        stem = f"{run.arm}_seed{run.seed}"
        for phase, hm in (("initial", run.initial_heatmap), ("final", run.final_heatmap)):
            if hm is None:
                continue
            put(f"heatmap_{stem}_{phase}.csv", heatmap_csv(hm))
            put(f"heatmap_{stem}_{phase}.pgm", heatmap_pgm(hm))
        put(f"run_{stem}.json", json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
        put(f"returns_{stem}.csv", run_curve_csv(run))
        if run.reward_model is not None:
            for k, net in enumerate(run.reward_model.members):
                path = out / f"reward_{stem}_m{k}.ckpt"
                save_checkpoint(net, path)
                written.append(path)
    put("summary.json", json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    return written
