"""Command-line entry point: ``iici {gen-data,train,eval,ablate,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from . import dataset as dsmod
from .config import ConfigError, dump_config, load_config
from .experiments import SWEEP_PARAMS, ablate, evaluate_state, make_benchmark, order_rate, probe, sweep
from .trainer import VARIANTS, NumericalError, init_state, load_checkpoint, run_epoch, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _data_path(data_dir, stem, fmt=None):
    data_dir = Path(data_dir)
    if fmt:
        return data_dir / f"{stem}.{fmt}"
    for ext in ("bin", "csv"):
        p = data_dir / f"{stem}.{ext}"
        if p.exists():
            return p
    raise UsageError(f"no {stem}.bin or {stem}.csv in {data_dir}")


def _write_csv(path, rows):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.updated(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench = make_benchmark(cfg)
    fmt = cfg.data_format
    for stem, ds in (("train_full", bench.train_full), ("train_sct", bench.train),
                     ("query", bench.query), ("gallery", bench.gallery)):
        dsmod.save_dataset(ds, out / f"{stem}.{fmt}")
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"wrote {bench.train.N} SCT training samples ({bench.train.Y} ids, {bench.train.C} cameras), "
          f"{bench.query.N} queries, {bench.gallery.N} gallery items to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.updated(seed=args.seed)
    if args.variant:
        cfg = cfg.updated(variant=args.variant)
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory {args.data} does not exist")
    ds = dsmod.load_dataset(_data_path(args.data, "train_sct"))
    tcfg = cfg.train()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = init_state(ds, tcfg)
    with open(out / "trace.jsonl", "w") as trace:
        def emit(rec):
            trace.write(json.dumps(rec, sort_keys=True) + "\n")

        for _ in range(tcfg.epochs):
            run_epoch(state, ds, tcfg, on_record=emit)
    save_checkpoint(state, out / "checkpoint.bin")
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"trained {cfg.variant} for {tcfg.epochs} epochs; checkpoint in {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} does not exist")
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory {args.data} does not exist")
    state = load_checkpoint(args.checkpoint)
    query = dsmod.load_dataset(_data_path(args.data, "query"))
    gallery = dsmod.load_dataset(_data_path(args.data, "gallery"))
    train = dsmod.load_dataset(_data_path(args.data, "train_sct"))
    res = evaluate_state(state, query, gallery)
    pr = probe(state, query, gallery, cfg, cfg.seed)
    rate = order_rate(state, train, cfg, cfg.seed)
    row = {"run_id": args.run_id or cfg.run_id, "variant": args.variant or cfg.variant, "seed": cfg.seed,
           "probe_acc": pr.accuracy, "probe_chance": pr.chance, "order_rate": rate}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps({**row, **res.to_dict()}, indent=2, sort_keys=True))
    csv_row = {"run_id": row["run_id"], "variant": row["variant"], "seed": row["seed"], "mAP": res.mAP,
               "R1": res.cmc[1], "R5": res.cmc[5], "R10": res.cmc[10], "probe_acc": pr.accuracy,
               "order_rate": rate}
    _write_csv(out / "result.csv", [{k: _fmt(v) for k, v in csv_row.items()}])
    print(f"mAP {res.mAP:.4f}  R1 {res.cmc[1]:.4f}  R5 {res.cmc[5]:.4f}  R10 {res.cmc[10]:.4f}  "
          f"probe {pr.accuracy:.3f} (chance {pr.chance:.3f})  order {rate:.3f}")
    return EXIT_OK


def _seed_list(cfg, n):
    return [cfg.seed + s for s in range(n)]


def cmd_ablate(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs, table = ablate(cfg, _seed_list(cfg, args.seeds),
                         progress=lambda r: print(f"  {r.variant} seed {r.seed}: R1 {r.R1:.3f} mAP {r.mAP:.3f}"))
    _write_csv(out / "ablation_runs.csv", [{k: _fmt(v) for k, v in r.items()} for r in runs])
    _write_csv(out / "ablation_table.csv", [{k: _fmt(v) for k, v in r.items()} for r in table])
    for r in table:
        print(f"{r['variant']}  R1 {100 * r['R1_mean']:.1f} ± {100 * r['R1_std']:.1f}  "
              f"mAP {100 * r['mAP_mean']:.1f} ± {100 * r['mAP_std']:.1f}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = [float(v) if args.param == "overlap" else int(v) for v in args.values]
    runs, curve = sweep(cfg, args.param, values, _seed_list(cfg, args.seeds), variant=args.variant)
    _write_csv(out / f"sweep_{args.param}_runs.csv", [{k: _fmt(v) for k, v in r.items()} for r in runs])
    _write_csv(out / f"sweep_{args.param}.csv", [{k: _fmt(v) for k, v in r.items()} for r in curve])
    # whitespace-separated copy for gnuplot
    lines = ["# value R1_mean R1_std mAP_mean mAP_std SC"]
    lines += [f"{r['value']} {r['R1_mean']:.6f} {r['R1_std']:.6f} {r['mAP_mean']:.6f} {r['mAP_std']:.6f} {r['SC']}"
              for r in curve]
    (out / f"sweep_{args.param}.dat").write_text("\n".join(lines) + "\n")
    for r in curve:
        print(f"{args.param}={r['value']}  R1 {100 * r['R1_mean']:.1f}  mAP {100 * r['mAP_mean']:.1f}  SC {r['SC']}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="iici", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthesize a benchmark and its SCT split")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one variant")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--variant")
    e.add_argument("--run-id")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="all variants over several seeds")
    a.add_argument("--config")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="one hyper-parameter curve")
    s.add_argument("--config")
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"iici: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dsmod.DatasetFormatError, FileNotFoundError) as exc:
        print(f"iici: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, FloatingPointError) as exc:
        print(f"iici: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
