"""Command-line interface: dataset / train / sample / eval / bound.

Exit codes are a stable contract: 0 success, 1 runtime failure (IO, diverged
training, oracle gaps), 2 usage or configuration error.  Every command that
writes artifacts also writes a JSON manifest sufficient to re-run it; data
artifacts are byte-for-byte reproducible given (config, seed).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backward, config, datasets, density, metrics, nn, pdmp, ratio
from .errors import (
    ConfigError,
    ModelSpecMismatch,
    NonFiniteLoss,
    OracleGap,
    ParseError,
    PdgmError,
    UnknownDataset,
)
from .streams import stream

_CHUNK = 1024  # backward chains per RNG stream; keeps --threads K bit-exact


class UsageError(PdgmError):
    """Raised for errors that should exit with status 2."""


def _write_manifest(out_path: Path, command: str, args: dict, extras: dict,
                    t_start: float) -> None:
    doc = {
        "manifest_version": 1,
        "command": command,
        "version": f"pdgm-{__version__}",
        "args": args,
        "wall_time_s": round(time.monotonic() - t_start, 3),
    }
    doc.update(extras)
    manifest = out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


# ---------------------------------------------------------------------------
# Checkpoint <-> model plumbing


def _spec_metadata(spec: pdmp.ProcessSpec) -> dict:
    return {
        "process": spec.kind,
        "potential": spec.potential,
        "d": spec.d,
        "t_f": spec.t_f,
        "lambda_r": spec.lambda_r,
        "beta": [list(p) for p in spec.beta],
    }


def _spec_from_metadata(meta: dict) -> pdmp.ProcessSpec:
    return pdmp.ProcessSpec(
        kind=meta["process"], d=int(meta["d"]), t_f=float(meta["t_f"]),
        lambda_r=float(meta["lambda_r"]), potential=meta["potential"],
        beta=tuple(tuple(p) for p in meta["beta"]),
    )


def model_from_checkpoint(path):
    """Rebuild a ratio or density model (and its process spec) from disk."""
    params, meta = nn.load_checkpoint(path)
    spec = _spec_from_metadata(meta)
    if meta["model"] == "ratio":
        return ratio.RatioModel(params, spec, meta["omega"]), meta
    if meta["model"] == "density":
        return density.CondDensityModel(
            params, spec, n_components=int(meta["n_components"]),
            rate_cap=float(meta.get("rate_cap", 1e4)),
        ), meta
    raise ParseError(f"checkpoint has unknown model kind {meta['model']!r}")


# ---------------------------------------------------------------------------
# Commands


def cmd_dataset(args) -> int:
    t0 = time.monotonic()
    spec = datasets.DatasetSpec(args.name, args.n, seed=args.seed,
                                normalize=not args.no_normalize)
    samples = datasets.generate(spec)
    out = Path(args.out)
    datasets.save_csv(out, samples)
    _write_manifest(out, "dataset", vars(args) | {"func": None}, {}, t0)
    if args.figures:
        from . import report

        report.scatter_figure(samples, out.with_suffix(".png"), title=args.name)
    return 0


def _load_training_data(cfg: dict) -> np.ndarray:
    if cfg.get("data") is not None:
        return datasets.load_csv(cfg["data"])
    config.require(cfg, "dataset")
    spec = datasets.DatasetSpec(cfg["dataset"], cfg["n_data"], seed=cfg["seed"])
    return datasets.generate(spec)


def cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = config.load_config(args.config)
    # apply --set key=value overrides through the same schema parsers
    if args.set:
        overrides = config.parse_config("\n".join(args.set))
        for line in args.set:
            key = line.split("=", 1)[0].strip()
            cfg[key] = overrides[key]
    config.require(cfg, "process")
    data = _load_training_data(cfg)
    if data.shape[1] != cfg["d"]:
        raise ConfigError(
            f"data has dimension {data.shape[1]} but config says d = {cfg['d']}"
        )
    spec = pdmp.ProcessSpec(
        kind=cfg["process"], d=cfg["d"], t_f=cfg["t_f"],
        lambda_r=cfg["lambda_r"], potential=cfg["potential"],
    )
    tcfg = ratio.TrainConfig(
        steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        hidden_width=cfg["hidden_width"], n_blocks=cfg["n_blocks"],
        time_embed_dim=cfg["time_embed_dim"], omega=cfg["omega"],
        coord_subsample=cfg["coord_subsample"],
        mixture_components=cfg["mixture_components"],
    )
    rng = stream(cfg["seed"], 1)
    if spec.kind == "zzp":
        model, history = ratio.train_ratio(data, spec, tcfg, rng)
        meta = {"model": "ratio", "omega": model.omega}
    else:
        model, history = density.train_density(data, spec, tcfg, rng)
        meta = {"model": "density", "n_components": model.n_components,
                "rate_cap": model.rate_cap}
    meta.update(_spec_metadata(spec))
    meta["config_hash"] = config.config_hash(cfg)
    out_dir = Path(args.out_dir or cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.json"
    nn.save_checkpoint(ckpt, model.params, metadata=meta)
    loss_csv = out_dir / "loss.csv"
    with open(loss_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        for step, loss in history:
            fh.write(f"{step},{loss:.17g}\n")
    _write_manifest(ckpt, "train",
                    {"config": args.config, "set": args.set or []},
                    {"config_hash": meta["config_hash"], "seed": cfg["seed"],
                     "final_loss": history[-1][1] if history else None}, t0)
    if args.figures:
        from . import report

        report.loss_figure(history, out_dir / "loss.png")
    print(ckpt)
    return 0


def _run_backward_chunked(model, spec, n, steps, init_mode, seed, threads):
    """Chunked backward run whose output is independent of thread count."""
    grid = backward.time_grid_quadratic(spec.t_f, steps)
    bounds = list(range(0, n, _CHUNK))
    tasks = [(i, min(_CHUNK, n - lo)) for i, lo in enumerate(bounds)]

    def run_one(task):
        i, size = task
        cfg = backward.BackwardConfig(grid=grid, n_samples=size, seed=seed,
                                      init_mode=init_mode)
        return backward.run_backward(model, spec, cfg, stream(seed, 11, i))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]
    x = np.concatenate([r[0] for r in results], axis=0)
    v = np.concatenate([r[1] for r in results], axis=0)
    evals = sum(r[2].model_evals for r in results)
    sats = sum(r[2].saturations for r in results)
    return x, v, evals, sats


def cmd_sample(args) -> int:
    t0 = time.monotonic()
    model, meta = model_from_checkpoint(args.checkpoint)
    spec = model.spec
    if args.init == "learned" and spec.kind == "zzp":
        raise UsageError("learned init unsupported for zzp")
    if args.steps == 0:
        rng = stream(args.seed, 11, 0)
        cfg = backward.BackwardConfig(
            grid=backward.time_grid_quadratic(spec.t_f, 0),
            n_samples=args.n, seed=args.seed, init_mode=args.init)
        x, v, _ = backward.run_backward(model, spec, cfg, rng)
        evals = sats = 0
    else:
        x, v, evals, sats = _run_backward_chunked(
            model, spec, args.n, args.steps, args.init, args.seed, args.threads)
    out = Path(args.out)
    datasets.save_csv(out, x)
    _write_manifest(out, "sample",
                    {"checkpoint": args.checkpoint, "n": args.n,
                     "steps": args.steps, "init": args.init,
                     "seed": args.seed, "threads": args.threads},
                    {"model_evals": evals, "saturations": sats,
                     "config_hash": meta.get("config_hash")}, t0)
    if args.figures:
        from . import report

        report.scatter_figure(x, out.with_suffix(".png"))
    return 0


_METRIC_FNS = {"mmd": metrics.mmd, "w2": metrics.wasserstein2}


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for name in names:
        if name not in _METRIC_FNS:
            raise UsageError(f"unknown metric {name!r}; valid: mmd, w2")
    reference = datasets.load_csv(args.reference)
    out = Path(args.out)
    if args.sweep_steps:
        if not args.checkpoint:
            raise UsageError("--sweep-steps requires --checkpoint")
        step_counts = [int(s) for s in args.sweep_steps.split(",")]
        model, _ = model_from_checkpoint(args.checkpoint)
        rows = []
        for steps in step_counts:
            x, _, _, _ = _run_backward_chunked(
                model, model.spec, args.n, steps, args.init, args.seed,
                args.threads)
            rows.append([steps] + [_METRIC_FNS[m](x, reference) for m in names])
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("steps," + ",".join(names) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" if i else str(v)
                                  for i, v in enumerate(row)) + "\n")
        if args.figures:
            from . import report

            report.sweep_figure([r[0] for r in rows], [r[1] for r in rows],
                                out.with_suffix(".png"), metric=names[0])
    else:
        if not args.generated:
            raise UsageError("--generated is required unless sweeping")
        generated = datasets.load_csv(args.generated)
        config_hash = ""
        if args.checkpoint:
            _, meta = model_from_checkpoint(args.checkpoint)
            config_hash = meta.get("config_hash") or ""
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric,value,n,seed,config_hash\n")
            for name in names:
                value = _METRIC_FNS[name](generated, reference)
                fh.write(f"{name},{value:.17g},{generated.shape[0]},"
                         f"{args.seed},{config_hash}\n")
    _write_manifest(out, "eval", {k: v for k, v in vars(args).items()
                                  if k != "func"}, {}, t0)
    return 0


def cmd_bound(args) -> int:
    t0 = time.monotonic()
    model, _ = model_from_checkpoint(args.checkpoint)
    spec = model.spec
    if spec.kind != "zzp" or spec.d != 1:
        raise UsageError("oracle requires d=1 zig-zag checkpoint")
    x0 = datasets.load_csv(args.data)
    n_t_bins = 40
    oracle = metrics.build_ratio_oracle(
        spec, x0, stream(args.seed, 21),
        n_paths=max(args.oracle_draws // n_t_bins, 1), n_t_bins=n_t_bins)
    result = metrics.zzp_g_integral(model, oracle, spec, x0,
                                    stream(args.seed, 22), n_paths=args.paths)
    doc = {
        "bound_mc": result.bound_mc,
        "bound_se": result.bound_se,
        "m_hat": result.m_hat,
        "unavailable_fraction": result.unavailable_fraction,
    }
    if args.c is not None and args.gamma is not None:
        doc["eq9_total"] = metrics.tv_bound_eq9(
            args.c, args.gamma, spec.t_f, result.m_hat, spec.d)
    out = Path(args.out)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    _write_manifest(out, "bound", {k: v for k, v in vars(args).items()
                                   if k != "func"}, {}, t0)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdgm",
                                description="piecewise-deterministic generative models")
    sub = p.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("dataset", help="generate a named 2-d dataset")
    d.add_argument("--name", required=True)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.add_argument("--no-normalize", action="store_true")
    d.add_argument("--figures", action="store_true",
                   help="also render a scatter PNG next to the CSV")
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="fit the time-reversal characteristics")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.add_argument("--out-dir", default=None)
    t.add_argument("--figures", action="store_true",
                   help="also render the loss curve as PNG")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw from the learned backward process")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--init", choices=backward.INIT_MODES, default="base")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--figures", action="store_true",
                   help="also render a scatter PNG next to the CSV")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare generated samples to a reference")
    e.add_argument("--generated", default=None)
    e.add_argument("--reference", required=True)
    e.add_argument("--metrics", default="mmd")
    e.add_argument("--sweep-steps", default=None,
                   help="comma list; resample at each backward step count")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--n", type=int, default=10000)
    e.add_argument("--init", choices=backward.INIT_MODES, default="base")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out", required=True)
    e.add_argument("--figures", action="store_true",
                   help="also render the sweep curve as PNG")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bound", help="total-variation bound report (d=1 zig-zag)")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--data", required=True,
                   help="CSV of initial positions defining the data law")
    b.add_argument("--oracle-draws", type=int, default=1_000_000)
    b.add_argument("--paths", type=int, default=2000)
    b.add_argument("--C", dest="c", type=float, default=None)
    b.add_argument("--gamma", type=float, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, UnknownDataset) as exc:
        print(f"pdgm: error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLoss as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"pdgm: training diverged{where}: {exc}", file=sys.stderr)
        return 1
    except OracleGap as exc:
        print(f"pdgm: oracle gap {exc.gap_fraction:.3f}: {exc}", file=sys.stderr)
        return 1
    except (PdgmError, ModelSpecMismatch, OSError) as exc:
        print(f"pdgm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
