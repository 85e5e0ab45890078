"""Train WA, S-WA and ST-WA (optionally SA, WA-1, ST-WA-det) on a synthetic store.

    python3 scripts/run_ablation.py --out results/ablation --epochs 30

Writes one sub-directory per variant (report, loss curve) and a summary CSV.
"""
import argparse
import csv
import logging
from pathlib import Path

from stwa.data import prepare, synth_traffic
from stwa.model import VARIANTS, ModelConfig, STWAModel
from stwa.training import fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default="WA,S-WA,ST-WA")
    ap.add_argument("--N", type=int, default=8)
    ap.add_argument("--T", type=int, default=4032)
    ap.add_argument("--d", type=int, default=16)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--out", default="results/ablation")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    variants = [v for v in args.variants.split(",") if v]
    for v in variants:
        if v not in VARIANTS:
            ap.error(f"unknown variant {v!r}; valid: {', '.join(VARIANTS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        store = synth_traffic(args.N, args.T, seed)
        for v in variants:
            cfg = ModelConfig(N=args.N, d=args.d, k=args.k, variant=v, max_epochs=args.epochs,
                              patience=args.epochs + 1, seed=seed)
            ds = prepare(store, cfg.H, cfg.U)
            rep = fit(STWAModel(cfg), ds, cfg)
            run = out / f"{v}_seed{seed}"
            run.mkdir(exist_ok=True)
            (run / "report.json").write_text(rep.to_json() + "\n")
            (run / "loss_curve.csv").write_text(rep.loss_curve_csv())
            rows.append({"variant": v, "seed": seed, "params": rep.num_parameters,
                         "best_epoch": rep.best_epoch, "val_mae": rep.best_val_mae,
                         "test_mae": rep.test_metrics["mae"], "test_rmse": rep.test_metrics["rmse"],
                         "seconds": round(rep.total_seconds, 1)})
            print(f"{v:10s} seed={seed} val_mae={rep.best_val_mae:.4f} test_mae={rep.test_metrics['mae']:.4f}"
                  f" ({rep.total_seconds:.0f}s)")
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
