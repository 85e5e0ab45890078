"""Command-line entry point: ``stwa {train,eval,bench,synth}``.

Exit codes: 0 success, 1 I/O failure, 2 usage or validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, checkpoint
from .checkpoint import CheckpointError
from .data import ParseError, load_csv, prepare, save_csv, synth_traffic
from .model import VARIANTS, ModelConfig, STWAModel
from .stgen import ConfigError
from .training import evaluate, fit

log = logging.getLogger("stwa")

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def read_config(path) -> dict:
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a flat JSON object")
    return raw


def load_config(raw: dict, overrides: dict) -> ModelConfig:
    raw = dict(raw)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig.from_dict(raw)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    store = load_csv(args.data)
    overrides = {"seed": args.seed, "variant": args.variant}
    raw_cfg = read_config(args.config)
    if "N" not in raw_cfg:
        overrides["N"] = store.n_sensors
    if "F" not in raw_cfg:
        overrides["F"] = store.values.shape[2]
    cfg = load_config(raw_cfg, overrides)
    if (cfg.N, cfg.F) != (store.n_sensors, store.values.shape[2]):
        raise UsageError(f"config expects N={cfg.N}, F={cfg.F} but data has "
                         f"N={store.n_sensors}, F={store.values.shape[2]}")
    try:
        dataset = prepare(store, cfg.H, cfg.U)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    model = STWAModel(cfg)
    report = fit(model, dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save_model(out / "model.ckpt", model, dataset.normalizer,
                          extra={"sensor_ids": dataset.sensor_ids})
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (out / "loss_curve.csv").write_text(report.loss_curve_csv(), encoding="utf-8", newline="")
    (out / "epoch_times.csv").write_text(report.timings_csv(), encoding="utf-8", newline="")
    log.info("best epoch %d, val MAE %.4f, %s", report.best_epoch, report.best_val_mae, report.stop_reason)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    try:
        model, norm, _ = checkpoint.load_model(args.checkpoint)
    except (CheckpointError, ConfigError) as exc:
        raise UsageError(str(exc)) from None
    store = load_csv(args.data)
    cfg = model.config
    if (cfg.N, cfg.F) != (store.n_sensors, store.values.shape[2]):
        raise UsageError(f"checkpoint expects N={cfg.N}, F={cfg.F} but data has "
                         f"N={store.n_sensors}, F={store.values.shape[2]}")
    try:
        dataset = prepare(store, cfg.H, cfg.U)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if norm is not None:
        dataset.normalizer = norm
    result = evaluate(model, dataset, "test")
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    for v in args.variant:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; valid variants: {', '.join(VARIANTS)}")
    records = bench.run_bench(args.H, args.variant, repeats=args.repeats, N=args.N, d=args.d,
                              S=tuple(args.S), p=args.p, batch=args.batch, seed=args.seed or 0)
    text = bench.to_csv(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.N < 1 or args.T < 1:
        raise UsageError(f"N and T must be >= 1, got N={args.N}, T={args.T}")
    store = synth_traffic(args.N, args.T, args.seed or 0, noise=args.noise)
    save_csv(store, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stwa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, report and loss curve")
    p.add_argument("--config", help="flat JSON object of ModelConfig fields")
    p.add_argument("--data", required=True, help="CSV: header of sensor ids, one row per timestamp")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print test-split MAE/RMSE/MAPE as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="forward-pass timing sweep over H")
    p.add_argument("--H", type=_int_list, default=[12, 24, 48, 96])
    p.add_argument("--variant", type=_str_list, default=["SA", "WA", "ST-WA"])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--S", type=_int_list, default=[3, 2, 2])
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic traffic CSV")
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--T", type=int, default=2016)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
