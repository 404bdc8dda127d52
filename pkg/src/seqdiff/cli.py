"""Command-line entry point: make-data / train / sample / plan / forecast /
grad-check over a flat sectioned config file.

Every command is a pure function of (config, seed, input files); outputs are
CSV and JSON with deterministic formatting, and the effective configuration
is echoed next to them. Exit codes: 0 success, 1 usage or config error,
2 runtime failure. SEQDIFF_OUTDIR overrides [run] outdir.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import (CsvLayout, Dataset, Normalization, export_csv, ingest_csv,
                   make_cross_dataset, make_seasonal_series, sliding_windows)
from .decide import MAZE_LAYOUTS, generate_random_walk_dataset, load_maze, mpc_execute
from .errors import CheckpointError, ConfigError, DataError, SeqdiffError
from .network import Dims, GruModel, frame_unstack
from .rng import RngStream
from .sample import MATRIX_KINDS, make_matrix, sample_sequence
from .schedule import SCHEDULE_KINDS, build_schedule
from .train import (Checkpoint, TrainConfig, load_checkpoint, make_checkpoint,
                    restore_state, save_checkpoint, train_model)

ENV_OUTDIR = "SEQDIFF_OUTDIR"

# section -> key -> (type, default); None default means "no value set"
CONFIG_SCHEMA = {
    "run": {"seed": (int, 0), "outdir": (str, "out")},
    "data": {
        "kind": (str, "cross"), "path": (str, None), "n": (int, 500),
        "length": (int, 24), "noise": (float, 0.015), "d": (int, 4),
        "periods": (str, "12,24"), "maze": (str, "medium"),
        "trajectories": (int, 200), "steps": (int, 160),
        "time_col": (str, "t"), "seq_col": (str, "seq"), "features": (str, ""),
    },
    "schedule": {"kind": (str, "cosine"), "levels": (int, 36)},
    "model": {
        "latent": (int, 32), "hidden": (int, 64), "frame_stack": (int, 1),
        "parameterization": (str, "x0"),
    },
    "train": {
        "steps": (int, 2000), "batch": (int, 64), "lr": (float, 1e-3),
        "snr": (str, "plain"), "snr_cap": (float, 5.0),
        "fused_gamma": (float, 0.9), "log_every": (int, 100),
    },
    "sample": {
        "matrix": (str, "pyramid"), "length": (int, 16), "count": (int, 16),
        "ddim": (int, 0), "offset": (int, 1),
    },
    "plan": {
        "maze": (str, "medium"), "horizon": (int, 6), "mctg": (int, 1),
        "guidance": (float, 0.0), "episodes": (int, 20), "max_steps": (int, 160),
        "matrix": (str, "pyramid"), "ddim": (int, 0),
    },
    "forecast": {
        "context": (int, 24), "horizon": (int, 12), "samples": (int, 100),
        "matrix": (str, "autoregressive"), "ddim": (int, 0), "stride": (int, 1),
    },
}


def default_config() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in CONFIG_SCHEMA.items()}


def _convert(section: str, key: str, raw: str):
    if section not in CONFIG_SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in CONFIG_SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    typ, _ = CONFIG_SCHEMA[section][key]
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    cfg = default_config()
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw = line.partition("=")
        cfg[section][key.strip()] = _convert(section, key.strip(), raw.strip())
    return cfg


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = default_config() if path is None else parse_config_text(Path(path).read_text())
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        cfg[section.strip()][key.strip()] = _convert(section.strip(), key.strip(), raw.strip())
    if os.environ.get(ENV_OUTDIR):
        cfg["run"]["outdir"] = os.environ[ENV_OUTDIR]
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for section in sorted(cfg):
        lines.append(f"[{section}]")
        for key in sorted(cfg[section]):
            value = cfg[section][key]
            if value is None:
                continue
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["run"]["outdir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path) -> None:
    (out / "effective.cfg").write_text(dump_config(cfg))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                             for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _split_paths(base: str) -> dict[str, Path]:
    p = Path(base)
    stem, suffix = p.stem, p.suffix or ".csv"
    return {split: p.with_name(f"{stem}.{split}{suffix}") for split in ("train", "val", "test")}


# ----------------------------------------------------------------------
# commands

def cmd_make_data(cfg: dict) -> int:
    data_cfg = cfg["data"]
    if data_cfg["path"] is None:
        raise ConfigError("data.path is required for make-data")
    kind = data_cfg["kind"]
    rng = RngStream(cfg["run"]["seed"], 11)
    layout = CsvLayout(time_col=data_cfg["time_col"], seq_col=data_cfg["seq_col"])
    out = _outdir(cfg)
    if kind == "cross":
        ds = make_cross_dataset(data_cfg["n"], data_cfg["length"], data_cfg["noise"], rng)
        export_csv(data_cfg["path"], ds, layout)
    elif kind == "seasonal":
        periods = tuple(int(p) for p in data_cfg["periods"].split(","))
        seasonal = make_seasonal_series(data_cfg["d"], data_cfg["length"], periods, rng,
                                        noise=data_cfg["noise"])
        for split, path in _split_paths(data_cfg["path"]).items():
            arr = getattr(seasonal, split)[None]
            export_csv(path, Dataset(arr, seasonal.norm, split), layout)
    elif kind == "maze":
        maze = load_maze(data_cfg["maze"])
        tokens = generate_random_walk_dataset(maze, data_cfg["trajectories"],
                                              data_cfg["steps"], rng)
        export_csv(data_cfg["path"], Dataset(tokens, Normalization.fit(tokens)), layout)
    else:
        raise ConfigError(f"make-data cannot generate kind {kind!r}")
    _echo_config(cfg, out)
    return 0


def _build_layout(data_cfg: dict) -> CsvLayout:
    features = tuple(f for f in data_cfg["features"].split(",") if f)
    return CsvLayout(time_col=data_cfg["time_col"], feature_cols=features,
                     seq_col=data_cfg["seq_col"] or None)


def _load_training_sequences(cfg: dict) -> tuple[np.ndarray, Normalization]:
    data_cfg = cfg["data"]
    if data_cfg["path"] is None:
        raise ConfigError("data.path is required")
    layout = _build_layout(data_cfg)
    if data_cfg["kind"] == "seasonal":
        train_path = _split_paths(data_cfg["path"])["train"]
        ds = ingest_csv(train_path, layout)
        series = ds.sequences[0]
        norm = Normalization.fit(series)
        length = cfg["forecast"]["context"] + cfg["forecast"]["horizon"]
        windows = sliding_windows(norm.apply(series), length, cfg["forecast"]["stride"])
        return windows, norm
    ds = ingest_csv(data_cfg["path"], layout)
    return ds.norm.apply(ds.sequences), ds.norm


def cmd_train(cfg: dict, resume_path: str | None = None) -> int:
    sequences, norm = _load_training_sequences(cfg)
    out = _outdir(cfg)
    config = TrainConfig(
        steps=cfg["train"]["steps"], batch_size=cfg["train"]["batch"],
        lr=cfg["train"]["lr"], schedule_kind=cfg["schedule"]["kind"],
        levels=cfg["schedule"]["levels"],
        parameterization=cfg["model"]["parameterization"],
        snr_weighting=cfg["train"]["snr"], snr_cap=cfg["train"]["snr_cap"],
        fused_gamma=cfg["train"]["fused_gamma"],
        frame_stack=cfg["model"]["frame_stack"],
        latent_dim=cfg["model"]["latent"], hidden_dim=cfg["model"]["hidden"],
        seed=cfg["run"]["seed"], log_every=cfg["train"]["log_every"])
    resume = load_checkpoint(resume_path) if resume_path else None
    params, opt, schedule, metrics = train_model(sequences, config, resume=resume)
    meta = {
        "data_kind": cfg["data"]["kind"], "maze": cfg["data"]["maze"],
        "norm_mean": [float(v) for v in norm.mean],
        "norm_std": [float(v) for v in norm.std],
    }
    save_checkpoint(out / "checkpoint.bin", make_checkpoint(params, opt, config,
                                                            config.steps, meta))
    _write_csv(out / "metrics.csv", ["step", "loss", "elbo_mean"], metrics)
    _echo_config(cfg, out)
    return 0


def _load_model(path: str) -> tuple[GruModel, Checkpoint, Normalization]:
    ckpt = load_checkpoint(path)
    params, _, _ = restore_state(ckpt)
    norm = Normalization(np.array(ckpt.meta["norm_mean"]), np.array(ckpt.meta["norm_std"]))
    return GruModel(params), ckpt, norm


def cmd_sample(cfg: dict, ckpt_path: str) -> int:
    model, ckpt, norm = _load_model(ckpt_path)
    out = _outdir(cfg)
    sc = cfg["sample"]
    if sc["matrix"] not in MATRIX_KINDS:
        raise ConfigError(f"unknown matrix kind {sc['matrix']!r}")
    schedule = build_schedule(ckpt.schedule_kind, ckpt.levels)
    ddim = sc["ddim"] or None
    matrix = make_matrix(sc["matrix"], ckpt.levels, sc["length"],
                         offset=sc["offset"], ddim_steps=ddim)
    rng = RngStream(cfg["run"]["seed"], 23)
    z0 = model.zero_latent(sc["count"])
    result = sample_sequence(model, schedule, matrix, z0, rng)
    s = ckpt.dims.frame_stack
    mean_s, std_s = norm.tiled(s)
    rows = []
    for i, seq in enumerate(result.values):
        raw = frame_unstack(seq * std_s + mean_s, s)
        for t, vec in enumerate(raw):
            rows.append([i, t, *vec])
    d_raw = ckpt.dims.token
    _write_csv(out / "samples.csv", ["sample", "t"] + [f"f{j}" for j in range(d_raw)], rows)
    (out / "matrix.csv").write_text(matrix.to_csv())
    trace_rows = [[m, *row] for m, row in enumerate(result.level_trace)]
    _write_csv(out / "levels.csv", ["pass"] + [f"t{j}" for j in range(matrix.T)], trace_rows)
    _echo_config(cfg, out)
    return 0


def _wilson_interval(successes: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return 0.0, 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(0.0, min(center - half, p)), min(1.0, max(center + half, p))


def cmd_plan(cfg: dict, ckpt_path: str, horizon=None, mctg=None, guidance_scale=None) -> int:
    model, ckpt, norm = _load_model(ckpt_path)
    pc = cfg["plan"]
    out = _outdir(cfg)
    maze = load_maze(pc["maze"])
    schedule = build_schedule(ckpt.schedule_kind, ckpt.levels)
    h = horizon if horizon is not None else pc["horizon"]
    n_mctg = mctg if mctg is not None else pc["mctg"]
    scale = guidance_scale if guidance_scale is not None else pc["guidance"]
    rng = RngStream(cfg["run"]["seed"], 31)
    batch = mpc_execute(model, schedule, maze, norm, h, rng,
                        episodes=pc["episodes"], matrix_kind=pc["matrix"],
                        guidance_scale=scale, mctg_samples=n_mctg,
                        max_steps=pc["max_steps"], ddim_steps=pc["ddim"] or None)
    rows = []
    for e in range(pc["episodes"]):
        for t in range(pc["max_steps"]):
            rows.append([e, t, *batch.states[e, t], *batch.actions[e, t], batch.rewards[e, t]])
    _write_csv(out / "episodes.csv",
               ["episode", "t", "px", "py", "vx", "vy", "ax", "ay", "reward"], rows)
    hits = int(batch.success.sum())
    rate, lo, hi = _wilson_interval(hits, pc["episodes"])
    _write_json(out / "summary.json", {
        "episodes": pc["episodes"], "successes": hits, "success_rate": rate,
        "ci95_low": lo, "ci95_high": hi, "horizon": h, "mctg": n_mctg,
        "guidance_scale": scale,
    })
    _echo_config(cfg, out)
    return 0


def cmd_forecast(cfg: dict, ckpt_path: str) -> int:
    from .metrics import crps_sum, persistence_crps_sum

    model, ckpt, norm = _load_model(ckpt_path)
    fc = cfg["forecast"]
    data_cfg = cfg["data"]
    if data_cfg["path"] is None:
        raise ConfigError("data.path is required for forecast")
    test_path = _split_paths(data_cfg["path"])["test"]
    ds = ingest_csv(test_path, _build_layout(data_cfg))
    series = ds.sequences[0]
    if fc["context"] + fc["horizon"] > series.shape[0]:
        raise ConfigError("forecast window longer than the test split")
    context = series[:fc["context"]]
    truth = series[fc["context"]:fc["context"] + fc["horizon"]]

    schedule = build_schedule(ckpt.schedule_kind, ckpt.levels)
    n = fc["samples"]
    z = model.zero_latent(n)
    ctx_norm = norm.apply(context)
    for t in range(ctx_norm.shape[0]):
        _, z_t = model.step(z, np.repeat(ctx_norm[t:t + 1], n, axis=0),
                            np.zeros(n, dtype=np.int64))
        z = z_t.data
    matrix = make_matrix(fc["matrix"], ckpt.levels, fc["horizon"],
                         ddim_steps=fc["ddim"] or None)
    result = sample_sequence(model, schedule, matrix, z, RngStream(cfg["run"]["seed"], 37))
    samples = norm.invert(result.values)

    score, forecast = crps_sum(samples, truth)
    baseline = persistence_crps_sum(context[-1], truth)
    out = _outdir(cfg)
    rows = [[t, *forecast.quantiles[t]] for t in range(fc["horizon"])]
    _write_csv(out / "forecast_quantiles.csv",
               ["t"] + [f"q{int(round(q * 100)):02d}" for q in np.arange(1, 20) * 0.05], rows)
    _write_json(out / "report.json", {
        "crps_sum": score, "persistence_crps_sum": baseline,
        "relative_improvement": (baseline - score) / baseline if baseline > 0 else None,
        "samples": n, "context": fc["context"], "horizon": fc["horizon"],
    })
    _echo_config(cfg, out)
    return 0


def cmd_grad_check() -> int:
    report = gradcheck.run()
    for key, value in sorted(report.items()):
        print(f"{key}: {value}")
    return 0 if report["passed"] else 2


# ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file path")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="SECTION.KEY=VALUE")

    common(sub.add_parser("make-data", help="generate a synthetic dataset file"))
    p_train = sub.add_parser("train", help="train a model from a dataset file")
    common(p_train)
    p_train.add_argument("--resume", help="resume from a checkpoint")
    p_sample = sub.add_parser("sample", help="sample sequences from a checkpoint")
    common(p_sample)
    p_sample.add_argument("--checkpoint", required=True)
    p_plan = sub.add_parser("plan", help="receding-horizon maze control")
    common(p_plan)
    p_plan.add_argument("--checkpoint", required=True)
    p_plan.add_argument("--horizon", type=int)
    p_plan.add_argument("--mctg", type=int)
    p_plan.add_argument("--guidance-scale", type=float, dest="guidance_scale")
    p_forecast = sub.add_parser("forecast", help="probabilistic forecasting report")
    common(p_forecast)
    p_forecast.add_argument("--checkpoint", required=True)
    sub.add_parser("grad-check", help="run the gradient verification suite")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "grad-check":
            return cmd_grad_check()
        cfg = load_config(args.config, args.overrides)
        if args.command == "make-data":
            return cmd_make_data(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "sample":
            return cmd_sample(cfg, args.checkpoint)
        if args.command == "plan":
            return cmd_plan(cfg, args.checkpoint, args.horizon, args.mctg,
                            args.guidance_scale)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.checkpoint)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SeqdiffError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
