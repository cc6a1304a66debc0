"""Command line entry point: ``orca-swh {synth,train,estimate,eval,gradcheck}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .backbone import load_into, read_weights, write_weights
from .config import ConfigError, RunConfig, format_config, load_config
from .data import (CapacityError, GridField, dataset_series, format_buoy_text, load_grid_field, synth_generate,
                   write_grid_field)
from .model import OrcaModel
from .reports import write_buoy_csv, write_heatmap, write_metrics_csv
from .tensor import default_dtype
from .training import (AlignmentError, DivergenceError, evaluate, metrics_from_errors, persistence_forecast,
                       split_time, train, write_history_csv)

log = logging.getLogger("orca_swh")

WEIGHTS_FILE = "weights.orcaw"
HISTORY_FILE = "history.csv"
ESTIMATE_FILE = "estimate.grid"
METRICS_FILE = "metrics.csv"
SEGMENTS = ("train", "val", "test", "all")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(seed: int, dims: tuple[int, int, int, int, int], out_dir: str | Path) -> dict:
    """Write buoy files, truth and surrogate fields, a manifest and a ready run.cfg."""
    K, J, T, M, F = dims
    if M < 1:
        raise CapacityError(f"need at least one buoy, got M={M}")
    data = synth_generate(seed, K, J, T, M, F)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = data.dataset
    names, latlon = [], []
    for m in range(M):
        name = f"buoy_{m}.txt"
        (out / name).write_text(format_buoy_text(dataset_series(ds, m)), encoding="utf-8")
        names.append(name)
        lat, lon = ds.grid.center(*ds.locations[m])
        latlon.append(f"{lat:g}:{lon:g}")
    write_grid_field(out / "truth.grid", data.truth)
    write_grid_field(out / "surrogate.grid", data.surrogate)
    g = ds.grid
    pairs = {
        "buoy_files": ", ".join(names), "buoy_latlon": ", ".join(latlon),
        "grid_field": "surrogate.grid", "truth_field": "truth.grid", "out_dir": "run",
        "lat_north": g.lat_north, "lat_south": g.lat_south, "lon_west": g.lon_west,
        "lon_east": g.lon_east, "cell_deg": g.cell_deg, "interval_hours": f"{ds.interval_hours:g}",
        "seed": seed, "width": 32, "layers": 2, "heads": 4, "soft_prompt_len": 8,
        "window": min(8, T), "patch_len": min(4, T), "stride": min(2, T), "max_epochs": 50,
    }
    (out / "run.cfg").write_text(format_config(pairs), encoding="utf-8")
    files = names + ["truth.grid", "surrogate.grid", "run.cfg"]
    manifest = {
        "seed": seed, "K": K, "J": J, "T": T, "M": M, "F": F,
        "features": ds.feature_names,
        "buoys": [{"file": n, "row": int(r), "col": int(c), "latlon": ll}
                  for n, (r, c), ll in zip(names, ds.locations, latlon)],
        "sha256": {f: _sha256(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(files) + 1} files to {out}")
    return manifest


def _model_for(cfg: RunConfig, ds) -> OrcaModel:
    return OrcaModel(cfg.model, ds.grid, ds.locations, ds.feature_names, ds.interval_hours)


def cmd_train(cfg: RunConfig) -> int:
    ds = cfg.load_dataset()
    T = ds.values.shape[2]
    surrogate = cfg.load_surrogate(T)
    split = split_time(T)
    model = OrcaModel.for_dataset(cfg.model, ds, split.train)
    if default_dtype() == np.float64:
        model.params = model.params.astype(np.float64)
    print(f"train {split.train.start}:{split.train.stop}  val {split.val.start}:{split.val.stop}  "
          f"test {split.test.start}:{split.test.stop}  tokens={model.n_tokens}  alpha={cfg.train.alpha}")
    try:
        result = train(model, ds, surrogate, split, cfg.train)
    except DivergenceError as exc:
        print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return 1
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_weights(cfg.out_dir / WEIGHTS_FILE, result.params.arrays)
    write_history_csv(cfg.out_dir / HISTORY_FILE, result.history)
    (cfg.out_dir / "prompt.txt").write_text(model.prompt_text + "\n", encoding="utf-8")
    last = result.history[-1]
    print(f"epochs={last['epoch']} best_epoch={result.best_epoch} L1 {result.history[0]['L1']:.4f} -> "
          f"{last['L1']:.4f}  wrote {cfg.out_dir / WEIGHTS_FILE}")
    return 0


def _segment(cfg_split, name: str, T: int) -> slice:
    return slice(0, T) if name == "all" else getattr(cfg_split, name)


def cmd_estimate(cfg: RunConfig, weights: Path | None = None, segment: str = "test",
                 times: list[int] | None = None, scale: int = 16) -> int:
    ds = cfg.load_dataset()
    T = ds.values.shape[2]
    seg = _segment(split_time(T), segment, T)
    model = _model_for(cfg, ds)
    load_into(model.params, read_weights(weights or cfg.out_dir / WEIGHTS_FILE), strict=True)
    est = model.estimate(ds, seg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_grid_field(out / ESTIMATE_FILE, GridField(est, "estimate"))
    steps = np.arange(T)[seg]
    for m, (r, c) in enumerate(model.locations):
        write_buoy_csv(out / f"buoy_{m}.csv", steps, ds.swh[m, seg], est[r, c], ds.swh_mask[m, seg])
    for i in times or []:
        if not 0 <= i < est.shape[2]:
            raise IndexError(f"time index {i} is outside the {segment} segment of {est.shape[2]} steps")
        lo, hi = write_heatmap(out / f"heatmap_t{i}.png", est[:, :, i], scale)
        print(f"heatmap t={i} (step {steps[i]}): min={lo:.4f} max={hi:.4f}")
    print(f"estimate {est.shape[0]}x{est.shape[1]}x{est.shape[2]} over {segment} "
          f"steps {steps[0]}..{steps[-1]} -> {out / ESTIMATE_FILE}")
    return 0


def cmd_eval(cfg: RunConfig, estimate: Path | None = None, segment: str = "test") -> int:
    ds = cfg.load_dataset()
    T = ds.values.shape[2]
    seg = _segment(split_time(T), segment, T)
    n = len(range(T)[seg])
    path = estimate or cfg.out_dir / ESTIMATE_FILE
    fld = load_grid_field(path, ds.grid)
    if fld.values.shape[2] != n:
        raise AlignmentError(f"{path} holds {fld.values.shape[2]} steps but the {segment} segment has {n}")
    rows = {"estimate": evaluate(fld.values, ds.swh[:, seg], ds.locations, ds.swh_mask[:, seg])}
    if seg.start > 0:
        keep = ~ds.swh_mask[:, seg]
        rows["persistence"] = metrics_from_errors((ds.swh[:, seg] - persistence_forecast(ds, seg))[keep])
    if cfg.truth_field is not None:
        truth = load_grid_field(cfg.truth_field, ds.grid, steps=T).values[:, :, seg]
        rows["estimate_vs_truth_grid"] = metrics_from_errors(fld.values.astype(np.float64) - truth)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(cfg.out_dir / METRICS_FILE, rows)
    for name, m in rows.items():
        print(f"{name:<24} MAE={m.mae:.4f} MSE={m.mse:.4f} RMSE={m.rmse:.4f}")
    return 0


def cmd_gradcheck(seed: int = 0, corrupt: str | None = None) -> int:
    results = gradcheck.run_all(seed, corrupt=corrupt)
    print(gradcheck.format_report(results))
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--alpha", type=float, help="weight of the numerical-model regularizer")
    common.add_argument("--prompt", choices=("full", "light", "no-features"), help="prompt variant")
    common.add_argument("--no-location", action="store_true", help="drop the location token")
    common.add_argument("-q", "--quiet", action="store_true", help="only print summaries")

    parser = argparse.ArgumentParser(prog="orca-swh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic dataset")
    p.add_argument("--dims", type=_ints, default=[8, 8, 32, 3, 3], metavar="K,J,T,M,F")
    sub.add_parser("train", parents=[common], help="fit the trainable arrays")
    p = sub.add_parser("estimate", parents=[common], help="write grid estimates, buoy series and heatmaps")
    p.add_argument("--weights", type=Path)
    p.add_argument("--segment", choices=SEGMENTS, default="test")
    p.add_argument("--times", type=_ints, default=[], metavar="t1,t2", help="heatmap time indices in the segment")
    p.add_argument("--scale", type=int, default=16, help="pixels per grid cell in heatmaps")
    p = sub.add_parser("eval", parents=[common], help="MAE/MSE/RMSE of an estimate at the buoys")
    p.add_argument("--estimate", type=Path)
    p.add_argument("--segment", choices=SEGMENTS, default="test")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks in 64-bit mode")
    p.add_argument("--corrupt-grad", metavar="ARRAY", help=argparse.SUPPRESS)
    return parser


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    overrides = {"seed": args.seed, "alpha": args.alpha, "prompt": args.prompt,
                 "out_dir": args.out.resolve() if args.out else None,
                 "use_location": "false" if args.no_location else None}
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        if args.command == "synth":
            if len(args.dims) != 5:
                raise ConfigError("--dims needs five integers K,J,T,M,F")
            cmd_synth(args.seed or 0, tuple(args.dims), args.out or Path("synth"))
            return 0
        if args.command == "gradcheck":
            seed = args.seed
            if seed is None and args.config is not None:
                seed = load_config(args.config, check_paths=False).seed
            return cmd_gradcheck(seed or 0, args.corrupt_grad)
        cfg = _load(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.weights, args.segment, args.times, args.scale)
        return cmd_eval(cfg, args.estimate, args.segment)
    except (OSError, ValueError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
