"""Command-line entry point.

Subcommands: ingest, phantom, preprocess, train, predict, evaluate,
baseline, model, gradcheck.  Exit codes: 0 success, 1 validation/usage
error, 2 I/O error, 3 numeric divergence.  `--seed` fixes every
stochastic choice; `--threads` caps BLAS parallelism (1 = bit-exact).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit 1 with help text
        self.print_usage(sys.stderr)
        raise SystemExit_usage(message)


class SystemExit_usage(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="perfuseg",
                     description="4D CT-perfusion stroke segmentation pipeline")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread cap (1 = bit-exact reproducibility)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="assemble DICOM files into a CTPV volume")
    p.add_argument("--in", dest="input", required=True, help="DICOM directory")
    p.add_argument("--out", required=True, help="output .ctpv path")

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    p.add_argument("--spec", default="default", help="spec config file or 'default'")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="register, skull-strip, enhance")
    p.add_argument("--in", dest="input", required=True, help="input .ctpv")
    p.add_argument("--out", required=True, help="output .ctpv")
    p.add_argument("--skip-registration", action="store_true")
    p.add_argument("--dump-masks", default=None, help="directory for mask PGMs")

    p = sub.add_parser("train", help="train one leave-one-patient-out fold")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="directory of preprocessed volumes + labels")
    p.add_argument("--fold", required=True, help="held-out patient id")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("predict", help="predict slices with a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="preprocessed .ctpv")
    p.add_argument("--slice", default="all")
    p.add_argument("--stride", type=int, default=16)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--pred", required=True, help="directory of *_pred.pgm")
    p.add_argument("--truth", required=True, help="directory of *_labels.pgm")
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("baseline", help="parametric-map threshold baselines")
    p.add_argument("--in", dest="input", required=True, help=".ctpv (registered; not enhanced)")
    p.add_argument("--rule", default="all")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("model", help="print a model's layer/parameter audit")
    p.add_argument("--name", required=True)
    p.add_argument("--frames", type=int, default=30)

    sub.add_parser("gradcheck", help="finite-difference check of every operator")
    return parser


# ---------------------------------------------------------------------------
# subcommand bodies (imported lazily so --threads is set before numpy loads)

def _cmd_ingest(args) -> int:
    from .dicom import assemble_volume, parse_dicom
    from .volume import write_ctpv

    root = Path(args.input)
    paths = sorted(root.rglob("*.dcm"))
    if not paths:
        from .errors import IoError
        raise IoError(f"no .dcm files under {root}")
    frames = [parse_dicom(path.read_bytes()) for path in paths]
    volume = assemble_volume(frames)
    write_ctpv(volume, args.out)
    print(f"wrote {args.out}: {volume.n_frames} frames x {volume.n_slices} slices")
    return 0


def _phantom_spec_from_config(path: str, seed: int):
    from .config import load_config
    from .phantom import PhantomSpec

    if path == "default":
        return PhantomSpec(seed=seed)
    values = load_config(path)
    values.setdefault("seed", seed)
    allowed = {f for f in PhantomSpec.__dataclass_fields__ if f != "healthy"}
    unknown = set(values) - allowed - {"healthy_amplitude", "healthy_t0",
                                       "healthy_alpha", "healthy_beta"}
    if unknown:
        from .errors import ConfigError
        raise ConfigError(f"unknown phantom spec keys: {sorted(unknown)}")
    healthy_kwargs = {}
    for key, fld in (("healthy_amplitude", "amplitude"), ("healthy_t0", "t0"),
                     ("healthy_alpha", "alpha"), ("healthy_beta", "beta")):
        if key in values:
            healthy_kwargs[fld] = values.pop(key)
    spec = PhantomSpec(**values)
    if healthy_kwargs:
        from dataclasses import replace
        spec = replace(spec, healthy=replace(spec.healthy, **healthy_kwargs))
    return spec


def _cmd_phantom(args) -> int:
    import numpy as np

    from .phantom import generate_cohort
    from .volume import write_ctpv, write_pgm

    spec = _phantom_spec_from_config(args.spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for patient in generate_cohort(spec):
        pid = patient.volume.patient_id
        write_ctpv(patient.volume, out / f"{pid}.ctpv")
        with open(out / f"{pid}_transforms.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slice", "frame", "angle_deg", "dy", "dx"])
            for si, slice_transforms in enumerate(patient.transforms):
                for ti, tr in enumerate(slice_transforms):
                    writer.writerow([si, ti, repr(tr.angle_deg), repr(tr.dy), repr(tr.dx)])
        for si in range(patient.labels.shape[0]):
            write_pgm(patient.labels[si], out / f"{pid}_s{si:02d}_labels.pgm")
            write_pgm(patient.brain_masks[si].astype(np.uint8) * 255,
                      out / f"{pid}_s{si:02d}_mask.pgm")
            for name, maps in patient.analytic_maps.items():
                (out / f"{pid}_s{si:02d}_{name}.f32").write_bytes(
                    np.ascontiguousarray(maps[si], dtype="<f4").tobytes()
                )
        print(f"wrote patient {pid}")
    return 0


def _cmd_preprocess(args) -> int:
    import numpy as np

    from .preprocess import enhance_contrast, register_volume, strip_skull
    from .volume import read_ctpv, write_ctpv, write_pgm

    volume = read_ctpv(args.input)
    if not args.skip_registration:
        volume, _ = register_volume(volume)
    volume, masks = strip_skull(volume)
    volume = enhance_contrast(volume, masks)
    write_ctpv(volume, args.out)
    if args.dump_masks:
        mask_dir = Path(args.dump_masks)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for si in range(masks.shape[0]):
            write_pgm(masks[si].astype(np.uint8) * 255,
                      mask_dir / f"{Path(args.out).stem}_s{si:02d}_mask.pgm")
    print(f"wrote {args.out}")
    return 0


def _load_cohort_dir(root: Path) -> dict:
    import numpy as np

    from .errors import IoError
    from .volume import read_ctpv, read_pgm

    data = {}
    for ctpv in sorted(root.glob("*.ctpv")):
        pid = ctpv.stem
        volume = read_ctpv(ctpv, patient_id=pid)
        label_paths = sorted(root.glob(f"{pid}_s*_labels.pgm"))
        if len(label_paths) != volume.n_slices:
            raise IoError(
                f"{pid}: {len(label_paths)} label files for {volume.n_slices} slices"
            )
        labels = np.stack([read_pgm(p) for p in label_paths])
        data[pid] = (volume, labels)
    if not data:
        raise IoError(f"no .ctpv volumes under {root}")
    return data


def _train_config(path: str | None, seed: int):
    from .config import load_config
    from .errors import ConfigError
    from .training import TrainConfig

    values = load_config(path) if path else {}
    values.setdefault("seed", seed)
    unknown = set(values) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
    return TrainConfig(**values)


def _cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .errors import ConfigError
    from .training import FoldPlan, train_fold

    data = _load_cohort_dir(Path(args.data))
    if args.fold not in data:
        raise ConfigError(f"fold patient {args.fold!r} not in cohort {sorted(data)}")
    config = _train_config(args.config, args.seed)
    plan = FoldPlan(held_out=args.fold,
                    training=tuple(p for p in sorted(data) if p != args.fold))
    result = train_fold(plan, config, args.model, data)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / f"{args.model}_{args.fold}.psck"
    save_checkpoint(ckpt_path, args.model, result.params, result.optimizer_state)
    log_path = out / f"{args.model}_{args.fold}_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_cost", "val_cost", "seconds"])
        for epoch, train_cost, val_cost, seconds in result.log:
            writer.writerow([epoch, repr(train_cost), repr(val_cost), f"{seconds:.3f}"])
    print(f"fold {args.fold}: best epoch {result.best_epoch} "
          f"cost {result.best_cost:.6f}; wrote {ckpt_path}")
    return 0


def _cmd_predict(args) -> int:
    from .checkpoint import load_checkpoint
    from .errors import CheckpointError, ConfigError
    from .inference import apply_mask, classify_pixels, predict_slice, quantize_map, render_output
    from .models import build_model
    from .volume import read_ctpv, write_pgm

    volume = read_ctpv(args.input)
    name, params, _ = load_checkpoint(args.ckpt)
    if name != args.model:
        raise CheckpointError(f"checkpoint is for model {name!r}, not {args.model!r}")
    spec, fresh = build_model(args.model, n_frames=volume.n_frames, seed=args.seed)
    missing = set(fresh) ^ set(params)
    if missing:
        raise CheckpointError(f"checkpoint/spec parameter mismatch: {sorted(missing)}")
    for key in fresh:
        if fresh[key].data.shape != params[key].data.shape:
            raise CheckpointError(
                f"{key}: checkpoint shape {params[key].data.shape} "
                f"!= spec shape {fresh[key].data.shape}"
            )

    if args.slice == "all":
        indices = range(volume.n_slices)
    else:
        try:
            indices = [int(args.slice)]
        except ValueError:
            raise ConfigError(f"--slice must be an index or 'all', got {args.slice!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    mask = volume.voxels.max(axis=0) > 0  # enhanced volumes are 0 off-mask
    for si in indices:
        cont = predict_slice(spec, params, volume.slice_series(si), args.stride)
        labels = apply_mask(classify_pixels(cont), mask[si])
        write_pgm(quantize_map(cont), out / f"{stem}_s{si:02d}_cont.pgm")
        render_output(labels, out / f"{stem}_s{si:02d}_pred.pgm")
    print(f"wrote predictions for {len(list(indices))} slice(s) to {out}")
    return 0


def _fmt_metric(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def _cmd_evaluate(args) -> int:
    from .errors import IoError, UndefinedMetricError
    from .metrics import auc_band_sweep, confusion_and_scalars
    from .volume import read_pgm

    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    pairs = []
    for pred_path in sorted(pred_dir.glob("*_pred.pgm")):
        key = pred_path.name[: -len("_pred.pgm")]
        truth_path = truth_dir / f"{key}_labels.pgm"
        if not truth_path.exists():
            # prediction stems carry the volume filename; labels carry the
            # patient id — fall back to suffix matching
            matches = sorted(truth_dir.glob(f"*_s{key.rsplit('_s', 1)[-1]}_labels.pgm"))
            matches = [m for m in matches if key.startswith(m.name.split("_s")[0])] or matches
            if len(matches) != 1:
                raise IoError(f"no unique truth file for prediction {pred_path.name}")
            truth_path = matches[0]
        pairs.append((key, pred_path, truth_path))
    if not pairs:
        raise IoError(f"no *_pred.pgm files under {pred_dir}")

    rows = []
    for key, pred_path, truth_path in pairs:
        pred = read_pgm(pred_path)
        truth = read_pgm(truth_path)
        report = confusion_and_scalars(pred, truth, provenance=key)
        for cls, cm in report.per_class.items():
            try:
                auc = _fmt_metric(auc_band_sweep(pred, truth, cls))
            except UndefinedMetricError:
                auc = "undefined"
            rows.append([key, cls.name.lower(), _fmt_metric(cm.dice),
                         _fmt_metric(cm.sensitivity), _fmt_metric(cm.specificity),
                         _fmt_metric(cm.precision), _fmt_metric(cm.accuracy),
                         auc, report.evaluated_pixels])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "class", "dice", "sens", "spec", "prec", "acc",
                         "auc", "pixels"])
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_baseline(args) -> int:
    import numpy as np

    from .errors import ConfigError
    from .param_maps import RULES, apply_rule, compute_maps
    from .preprocess import strip_skull
    from .volume import read_ctpv, write_pgm

    volume = read_ctpv(args.input)
    stripped, masks = strip_skull(volume)
    maps = compute_maps(stripped, masks)
    if args.rule == "all":
        rule_ids = sorted(RULES)
    elif args.rule in RULES:
        rule_ids = [args.rule]
    else:
        raise ConfigError(f"unknown rule {args.rule!r}; expected one of {sorted(RULES)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for name in maps.MAP_NAMES:
        arr = maps.map_named(name)
        (out / f"{stem}_{name}.f32").write_bytes(
            np.ascontiguousarray(arr, dtype="<f4").tobytes()
        )
    for rule_id in rule_ids:
        rule_mask = apply_rule(maps, rule_id)
        for si in range(rule_mask.shape[0]):
            write_pgm(rule_mask[si].astype(np.uint8) * 255,
                      out / f"{stem}_s{si:02d}_{rule_id}.pgm")
    print(f"wrote {len(rule_ids)} rule mask(s) to {out}")
    return 0


def _cmd_model(args) -> int:
    from .models import build_model, format_audit

    spec, params = build_model(args.name, n_frames=args.frames, seed=args.seed)
    print(format_audit(spec, params))
    return 0


def _cmd_gradcheck(args) -> int:
    from .errors import DivergenceError
    from .gradcheck import run_gradcheck

    results, ok = run_gradcheck(seed=args.seed)
    for op, err in sorted(results.items()):
        print(f"{op:24s} max relative error {err:.3e}")
    if not ok:
        raise DivergenceError("finite-difference check failed (tolerance 1e-4)")
    print("all operators pass (tolerance 1e-4)")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "phantom": _cmd_phantom,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "baseline": _cmd_baseline,
    "model": _cmd_model,
    "gradcheck": _cmd_gradcheck,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit_usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _set_threads(args.threads)

    from .errors import DivergenceError, IoError, PerfusegError, ValidationError
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PerfusegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))
