"""Command-line surface: generate, train, ablate, motivate, eval.

Exit codes: 0 success, 1 usage error, 2 data or config error,
3 numerical failure (a NaN or Inf reached a tensor).

Every command is deterministic given its config and seed; timestamps
appear only inside manifest files, never in data outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .data import BenchConfig, DataError, generate, leave_one_out, load_csv, save_csv
from .fourier import amplitude, fft, phase, reconstruct_phase_only
from .losses import LossWeights
from .model import load_checkpoint, save_checkpoint
from .training import (
    MODES,
    TrainConfig,
    effective_weights,
    evaluate,
    run_leave_one_out,
    train_student,
    train_teacher,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

ABLATION_ARMS = ("erm", "no-intern", "no-mutual", "no-exp", "full")

METRIC_ORDER = ("epoch", "cls_loss", "mse_loss", "align_loss", "exp_loss",
                "total", "val_acc")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems by default; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config files --------------------------------------------------------


def parse_config(path):
    """Flat `key = value` lines; blank lines and # comments ignored."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{ln}: expected `key = value`")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


GENERATE_KEYS = ("domains", "classes", "per_class", "length", "channels",
                 "noise", "seed")


def _bench_config(config_path):
    if config_path is None:
        return BenchConfig()
    raw = parse_config(config_path)
    unknown = set(raw) - set(GENERATE_KEYS)
    if unknown:
        raise DataError(f"unknown config key {sorted(unknown)[0]!r}")
    for key in GENERATE_KEYS:
        if key not in raw:
            raise DataError(f"missing config key {key!r}")
    try:
        domains = int(raw["domains"])
        return BenchConfig(
            domains=domains,
            classes=int(raw["classes"]),
            per_class=int(raw["per_class"]),
            length=int(raw["length"]),
            channels=int(raw["channels"]),
            noise_sigma=np.full(domains, float(raw["noise"])),
            seed=int(raw["seed"]),
        )
    except ValueError as exc:
        raise DataError(f"bad config value: {exc}") from None


TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "lr": float, "weight_decay": float,
    "lambda1": float, "lambda2": float, "lambda3": float,
    "exploration": str, "val_fraction": float, "virtual_domains": int,
    "hidden": int, "feature_dim": int,
}


def _train_config(config_path, mode, seed, exploration=None):
    raw = parse_config(config_path) if config_path else {}
    unknown = set(raw) - set(TRAIN_KEYS)
    if unknown:
        raise DataError(f"unknown config key {sorted(unknown)[0]!r}")
    vals = {}
    for key, cast in TRAIN_KEYS.items():
        if key in raw:
            try:
                vals[key] = cast(raw[key])
            except ValueError:
                raise DataError(f"bad config value for {key!r}: {raw[key]!r}") from None
    variant = exploration or vals.pop("exploration", "l2")
    variant = variant.replace("-", "_")
    weights = LossWeights(
        vals.pop("lambda1", 1.0), vals.pop("lambda2", 1.0),
        vals.pop("lambda3", 0.1), variant,
    )
    return TrainConfig(weights=weights, seed=seed, mode=mode, **vals)


def _config_snapshot(cfg: TrainConfig):
    return {
        "epochs": cfg.epochs, "batch_size": cfg.batch_size, "lr": cfg.lr,
        "weight_decay": cfg.weight_decay, "lambda1": cfg.weights.lambda1,
        "lambda2": cfg.weights.lambda2, "lambda3": cfg.weights.lambda3,
        "exploration": cfg.weights.variant, "val_fraction": cfg.val_fraction,
        "virtual_domains": cfg.virtual_domains, "mode": cfg.mode,
        "seed": cfg.seed, "hidden": cfg.hidden, "feature_dim": cfg.feature_dim,
    }


def _build_id():
    try:
        head = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if head.returncode == 0:
            return head.stdout.strip()
    except OSError:
        pass
    return f"difex-{__version__}"


def _write_manifest(path, payload):
    payload = dict(payload)
    payload["created_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    payload["build"] = _build_id()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_data_dir(path):
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isdir(path):
        raise DataError(f"not a dataset directory: {path}")
    if os.path.exists(manifest_path):
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        files = [os.path.join(path, f) for f in manifest.get("files", [])]
        channels = manifest.get("channels")
    else:
        manifest = {}
        files = sorted(
            os.path.join(path, f) for f in os.listdir(path)
            if f.startswith("domain_") and f.endswith(".csv")
        )
        channels = None
    if not files:
        raise DataError(f"no dataset files found in {path}")
    return [load_csv(f, channels=channels) for f in files], manifest


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- subcommands ---------------------------------------------------------


def cmd_generate(args):
    cfg = _bench_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    datasets = generate(cfg)
    files = []
    for ds in datasets:
        name = f"domain_{ds.domain}.csv"
        save_csv(ds, os.path.join(args.out, name))
        files.append(name)
    _write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "generate",
        "domains": cfg.domains, "classes": cfg.classes,
        "per_class": cfg.per_class, "length": cfg.length,
        "channels": cfg.channels, "seed": cfg.seed,
        "noise_sigma": list(cfg.noise_sigma),
        "patterns": [[[b, p] for b, p in pat] for pat in cfg.patterns],
        "envelopes": [list(row) for row in cfg.envelopes],
        "files": files,
    })
    print(f"wrote {len(files)} domain files "
          f"({cfg.samples_per_domain} rows each) to {args.out}")
    return EXIT_OK


def _metric_columns(rows):
    present = set()
    for row in rows:
        present.update(row)
    return [c for c in METRIC_ORDER if c in present]


def write_metrics(rows, path):
    cols = _metric_columns(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def cmd_train(args):
    domains, _ = _load_data_dir(args.data)
    if not any(ds.domain == args.target for ds in domains):
        raise DataError(f"target domain {args.target} not in dataset")
    cfg = _train_config(args.config, args.mode, args.seed, args.exploration)
    result = run_leave_one_out(domains, args.target, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(result.model, os.path.join(args.out, "student.ckpt"),
                    seed=cfg.seed)
    if result.teacher is not None:
        save_checkpoint(result.teacher, os.path.join(args.out, "teacher.ckpt"),
                        seed=cfg.seed)
    write_metrics(result.metrics, os.path.join(args.out, "metrics.csv"))
    _write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "train",
        "data": os.path.abspath(args.data),
        "target": args.target,
        "config": _config_snapshot(cfg),
        "selected_epoch": result.selected_epoch,
        "val_accuracy": result.val_accuracy,
        "target_accuracy": result.target_accuracy,
    })
    print(f"mode={cfg.mode} target={args.target} seed={cfg.seed} "
          f"val_acc={result.val_accuracy:.4f} "
          f"target_acc={result.target_accuracy:.4f}")
    return EXIT_OK


def _ablate_cell(payload):
    """All arms for one (target, seed) pair.

    The teacher depends on everything in the config except the mode, so
    the arms that distill share one teacher; training it per arm would
    reproduce it bit for bit three times over.
    """
    domains, target, seed, config_path, exploration = payload
    sources, target_ds = leave_one_out(domains, target)
    teacher = None
    rows = []
    for arm in ABLATION_ARMS:
        cfg = _train_config(config_path, arm, seed, exploration)
        if effective_weights(cfg).lambda1 > 0 and teacher is None:
            teacher = train_teacher(sources, cfg)
        result = train_student(sources, teacher, cfg)
        rows.append({
            "target": target, "mode": arm, "seed": seed,
            "target_acc": evaluate(result.model, [target_ds]),
            "val_acc": result.val_accuracy,
            "selected_epoch": result.selected_epoch,
        })
    return rows


def _worker_count(n_cells):
    raw = os.environ.get("DIFEX_THREADS")
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise DataError(f"DIFEX_THREADS must be an integer, got {raw!r}") from None
        if cap < 1:
            raise DataError("DIFEX_THREADS must be >= 1")
    return max(1, min(cap, n_cells))


def cmd_ablate(args):
    domains, _ = _load_data_dir(args.data)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise DataError(f"bad --seeds list {args.seeds!r}") from None
    if not seeds:
        raise DataError("no seeds given")
    _train_config(args.config, "full", 0, args.exploration)  # validate early
    targets = sorted(ds.domain for ds in domains)
    grid = [
        (domains, t, s, args.config, args.exploration)
        for t in targets for s in seeds
    ]
    workers = _worker_count(len(grid))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_ablate_cell, grid))
    else:
        cells = [_ablate_cell(cell) for cell in grid]
    rows = [r for cell in cells for r in cell]
    rows.sort(key=lambda r: (r["target"], ABLATION_ARMS.index(r["mode"]), r["seed"]))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "runs.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("target,mode,seed,target_acc,val_acc,selected_epoch\n")
        for r in rows:
            fh.write(",".join(_fmt(r[k]) for k in
                              ("target", "mode", "seed", "target_acc",
                               "val_acc", "selected_epoch")) + "\n")

    def cell(arm, t):
        accs = [r["target_acc"] for r in rows
                if r["mode"] == arm and r["target"] == t]
        return float(np.mean(accs)), float(np.std(accs))

    def overall(arm):
        accs = [r["target_acc"] for r in rows if r["mode"] == arm]
        return float(np.mean(accs)), float(np.std(accs))

    with open(os.path.join(args.out, "summary.csv"), "w", encoding="utf-8",
              newline="") as fh:
        heads = ["mode"]
        for t in targets:
            heads += [f"target_{t}_mean", f"target_{t}_std"]
        heads += ["overall_mean", "overall_std"]
        fh.write(",".join(heads) + "\n")
        for arm in ABLATION_ARMS:
            vals = []
            for t in targets:
                vals += list(cell(arm, t))
            vals += list(overall(arm))
            fh.write(arm + "," + ",".join(repr(v) for v in vals) + "\n")

    lines = [f"{'mode':<10}" + "".join(f"target {t:<12}" for t in targets)
             + "overall"]
    for arm in ABLATION_ARMS:
        parts = [f"{arm:<10}"]
        for t in targets:
            m, s = cell(arm, t)
            parts.append(f"{m:.4f}±{s:.4f}  ")
        m, s = overall(arm)
        parts.append(f"{m:.4f}±{s:.4f}")
        lines.append("".join(parts))
    table = "\n".join(lines) + "\n"
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    _write_manifest(os.path.join(args.out, "manifest.json"), {
        "command": "ablate",
        "data": os.path.abspath(args.data),
        "seeds": seeds,
        "arms": list(ABLATION_ARMS),
        "targets": targets,
        "config": _config_snapshot(_train_config(args.config, "full", seeds[0],
                                                 args.exploration)),
        "runs": rows,
    })
    print(table, end="")
    return EXIT_OK


def _parse_ids(spec_str, domains):
    by_domain = {ds.domain: ds for ds in domains}
    picks = []
    for token in spec_str.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" not in token:
            raise DataError(f"bad id {token!r}; expected DOMAIN:INDEX")
        d_str, i_str = token.split(":", 1)
        try:
            d, i = int(d_str), int(i_str)
        except ValueError:
            raise DataError(f"bad id {token!r}; expected DOMAIN:INDEX") from None
        if d not in by_domain:
            raise DataError(f"id {token!r} not found: no domain {d}")
        ds = by_domain[d]
        if not 0 <= i < len(ds):
            raise DataError(f"id {token!r} not found: domain {d} has {len(ds)} rows")
        picks.append((d, i))
    if not picks:
        raise DataError("no sample ids given")
    return picks


def cmd_motivate(args):
    domains, _ = _load_data_dir(args.data)
    by_domain = {ds.domain: ds for ds in domains}
    if args.ids:
        picks = _parse_ids(args.ids, domains)
    else:
        # default: the first class-0 sample of every domain
        picks = []
        for ds in domains:
            rows = np.flatnonzero(ds.y == 0)
            if rows.size:
                picks.append((ds.domain, int(rows[0])))
        if len(picks) < 1:
            raise DataError("no class-0 samples to pick by default")
    classes = {int(by_domain[d].y[i]) for d, i in picks}
    if len(classes) > 1:
        raise DataError(f"samples span classes {sorted(classes)}; pick one class")
    columns, names = [], []
    n_ch, length = by_domain[picks[0][0]].X.shape[1:]
    for d, i in picks:
        x = by_domain[d].X[i]
        if x.shape != (n_ch, length):
            raise DataError("samples have inconsistent shapes")
        raws, amps, phases, recons = [], [], [], []
        for ch in range(n_ch):
            s = fft(x[ch])
            raws.append(x[ch])
            amps.append(amplitude(s))
            phases.append(phase(s))
            recons.append(reconstruct_phase_only(s))
        tag = f"d{d}_{i}"
        for group, stackd in (("raw", raws), ("amp", amps),
                              ("phase", phases), ("recon", recons)):
            names.append(f"{group}_{tag}")
            columns.append(np.concatenate(stackd))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("channel,bin," + ",".join(names) + "\n")
        row = 0
        for ch in range(n_ch):
            for b in range(length):
                vals = ",".join(repr(float(c[row])) for c in columns)
                fh.write(f"{ch},{b},{vals}\n")
                row += 1
    print(f"wrote {4 * len(picks)} column groups "
          f"({len(picks)} sample(s)) to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    model, header = load_checkpoint(args.checkpoint)
    domains, _ = _load_data_dir(args.data)
    matches = [ds for ds in domains if ds.domain == args.target]
    if not matches:
        raise DataError(f"target domain {args.target} not in dataset")
    if header["kind"] == "teacher":
        from .training import flatten_features

        X = flatten_features(matches[0].X, "phase")
        _, logits = model.forward_np(X)
        acc = float(np.mean(np.argmax(logits, axis=1) == matches[0].y))
    else:
        acc = evaluate(model, matches)
    print(f"target={args.target} accuracy={acc!r}")
    return EXIT_OK


# -- argument wiring -----------------------------------------------------


def build_parser():
    parser = _Parser(prog="difex",
                     description="Domain-generalization experiments: "
                                 "phase-teacher distillation, correlation "
                                 "alignment, feature exploration.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic benchmark to CSV")
    p.add_argument("--config", help="flat key=value benchmark config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_generate)

    def common(p):
        p.add_argument("data", help="dataset directory (from `generate`)")
        p.add_argument("--config", help="flat key=value training config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--exploration", choices=("l2", "norm-l1"))

    p = sub.add_parser("train", help="one leave-one-domain-out training run")
    common(p)
    p.add_argument("--target", type=int, required=True, help="held-out domain id")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="full target x arm x seed grid")
    common(p)
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated seed list")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("motivate",
                       help="emit raw/amplitude/phase/reconstruction columns")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--ids", help="comma-separated DOMAIN:INDEX sample ids")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_motivate)

    p = sub.add_parser("eval", help="re-score a saved checkpoint")
    p.add_argument("data", help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", type=int, required=True)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NonFiniteError as exc:
        print(f"difex: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"difex: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
