"""Command-line entry point: ``vitt gen-data | train | eval``.

Exit codes: 0 ok, 2 configuration error, 3 packing/oracle failure,
4 training diverged (NaN), 5 missing checkpoint.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .attention import ConfigError
from .container import write_manifest
from .data import OracleError, PackingError, build_dataset, load_dataset
from .evaluation import (
    emit_comparison,
    emit_report,
    gru_comparison,
    ret_comparison,
    run_unseen_suite,
    study_data,
)
from .models import ViTTransformer
from .presets import Preset, apply_overrides, flatten, get_preset
from .training import TrainingDiverged, evaluate_mse, load_checkpoint, train

EXIT_CONFIG, EXIT_ORACLE, EXIT_NAN, EXIT_NO_CKPT = 2, 3, 4, 5
DATA_ROOT_ENV = "VITT_DATA_ROOT"


class MissingCheckpoint(FileNotFoundError):
    pass


def _data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def _resolve(args) -> Preset:
    p = apply_overrides(get_preset(args.preset), args.overrides)
    seed = args.seed
    p = replace(p, dataset=p.dataset.replace(seed=seed), train=replace(p.train, seed=seed),
                study=replace(p.study, seed=seed))
    if getattr(args, "ret", None) is not None:
        p = replace(p, train=replace(p.train, ret=args.ret == "on"))
    return p


def _write_config(out: Path, args, preset: Preset) -> None:
    out.mkdir(parents=True, exist_ok=True)
    entries = {"command": args.command}
    for k in ("data", "ckpt", "suite", "out"):
        v = getattr(args, k, None)
        if v is not None:
            entries[k] = v
    entries.update(flatten(preset))
    write_manifest(out / "config.txt", entries)


def cmd_gen_data(args) -> int:
    preset = _resolve(args)
    out = Path(args.out) if args.out else _data_root()
    t0 = time.perf_counter()
    m = build_dataset(preset.dataset, out, workers=args.workers)
    print(f"dataset: {out}  samples {m.n_total} (train {m.n_train}, test {m.n_test})  "
          f"seq_len {m.seq_len}  seed {m.seed}  [{time.perf_counter() - t0:.1f}s]")
    return 0


def cmd_train(args) -> int:
    preset = _resolve(args)
    data_dir = Path(args.data) if args.data else _data_root()
    out = Path(args.out)
    _write_config(out, args, preset)
    manifest, tr, te = load_dataset(data_dir)
    model = ViTTransformer(preset.model, seed=preset.train.seed)
    print(f"training {model.kind}: {model.params.count():,} parameters, {len(tr)} train / {len(te)} test")
    t0 = time.perf_counter()
    hist = train(model, tr, te, manifest.scaler, preset.train, out, log=print if args.verbose else None)
    print(f"final train {hist.train_mse[-1]:.4e}  test {hist.test_mse[-1]:.4e}  "
          f"[{time.perf_counter() - t0:.1f}s]  -> {out / 'ckpt.vttf'}")
    return 0


def _need_ckpt(path) -> Path:
    if path is None or not Path(path).is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    return Path(path)


def cmd_eval(args) -> int:
    preset = _resolve(args)
    out = Path(args.out)
    _write_config(out, args, preset)
    log = print if args.verbose else None
    if args.suite == "unseen":
        model, scaler = load_checkpoint(_need_ckpt(args.ckpt))
        manifest = preset.dataset
        if args.data:
            manifest, _, _ = load_dataset(args.data)
        rep = run_unseen_suite(model, scaler, manifest, seed=args.seed)
        emit_report(rep, out, plots=args.plots)
        for c in rep.cases:
            print(f"{c.name:22s} relative error {c.error:.4f}")
        print(f"{'mean':22s} relative error {rep.mean_error:.4f}  [{rep.runtime_s:.1f}s]")
        return 0
    if args.suite == "ret-compare":
        comp = ret_comparison(preset, out, log)
    else:
        transformer = None
        if args.ckpt is not None:
            model, _ = load_checkpoint(_need_ckpt(args.ckpt))
            tr, _, scaler = study_data(preset.study)
            transformer = (model, evaluate_mse(model, tr, scaler))
        comp = gru_comparison(preset, out, log, transformer)
    emit_comparison(comp, out, plots=args.plots)
    for arm, rep in comp.reports.items():
        errs = "  ".join(f"{k} {v:.4f}" for k, v in rep.errors.items())
        print(f"{arm:12s} train_mse {comp.train_mse[arm]:.3e}  {errs}  [{rep.runtime_s:.1f}s]")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vitt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", default="desk", help="paper or desk (default: desk)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("overrides", nargs="*", metavar="section.key=value",
                       help="preset overrides, e.g. train.epochs=10")

    g = sub.add_parser("gen-data", help="build a labelled dataset")
    common(g)
    g.add_argument("--out", help=f"output directory (default: ${DATA_ROOT_ENV} or ./data)")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the ViT-Transformer on a dataset")
    common(t)
    t.add_argument("--data", help=f"dataset directory (default: ${DATA_ROOT_ENV} or ./data)")
    t.add_argument("--out", default="run", help="run directory")
    t.add_argument("--ret", choices=("on", "off"), default=None, help="random extract training")
    t.add_argument("-v", "--verbose", action="store_true", help="print every epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run an evaluation suite")
    common(e)
    e.add_argument("--suite", choices=("unseen", "ret-compare", "gru-compare"), default="unseen")
    e.add_argument("--ckpt", help="checkpoint (.vttf); required for the unseen suite")
    e.add_argument("--data", help="dataset directory whose manifest supplies groups and materials")
    e.add_argument("--out", default="report", help="report directory")
    e.add_argument("--plots", action="store_true", help="also write SVG plots (needs matplotlib)")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PackingError, OracleError) as exc:
        print(f"data generation failed: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except MissingCheckpoint as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NO_CKPT


if __name__ == "__main__":
    sys.exit(main())
