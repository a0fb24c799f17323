"""Command-line surface: train, eval, classify, complete, ablate, export, synth.

Exit codes follow the shell-orchestration contract: 0 success, 1 usage or
configuration error, 2 runtime failure. Every subcommand confines its side
effects to the directory named by --out (or the config's out_dir).
"""

import os

# BLAS pools size themselves from these variables when the numeric stack
# loads, so the cap must land before any numpy import below.
_threads = os.environ.get("SEEDCLOUD_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import difflib
import sys
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .config import apply_overrides, format_config, load_config
from .data import save_cloud, write_manifest
from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    NumericsError,
    SeedCloudError,
    ShapeError,
    TrainingDiverged,
    UsageError,
)
from .training import (
    MetricsTable,
    build_dataset,
    completion_table_text,
    count_parameters,
    default_ablation_grid,
    eval_completion,
    eval_reconstruction,
    eval_unsupervised_classification,
    load_run,
    ordering_holds,
    predict_clouds,
    run_ablation,
    run_config_from_dict,
    run_config_to_dict,
    train_autoencoder,
    train_completion,
)

_USAGE = """\
usage: seedcloud SUBCOMMAND [flags]

subcommands:
  train     fit an autoencoder from a config; writes checkpoint + metrics
  eval      per-class reconstruction CD of a checkpoint, with oracle rows
  classify  linear classification on normalized codewords
  complete  train on partial inputs and compare against the no-model baseline
  ablate    train the decoder comparison grid and emit the ordering table
  export    write reconstruction PLYs and seed coordinates for inspection
  synth     generate the synthetic corpus to cloud files plus a manifest

common flags: --config PATH, --set KEY=VALUE (repeatable), --out DIR,
--seed INT, --quiet. `seedcloud SUBCOMMAND --help` lists the rest.
"""


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError (with a did-you-mean hint) instead
    of printing + exiting, so the dispatcher owns the exit code."""

    def error(self, message):
        if "unrecognized arguments:" in message:
            stray = message.split("unrecognized arguments:", 1)[1].split()
            flags = [t for t in stray if t.startswith("-")]
            if flags:
                close = difflib.get_close_matches(
                    flags[0], self._option_string_actions, n=1
                )
                if close:
                    message += f" (did you mean '{close[0]}'?)"
        raise UsageError(message)


def _parser(sub, checkpoint=False):
    p = _Parser(prog=f"seedcloud {sub}")
    p.add_argument("--config", default=None,
                   help="config file; training keys live in the [train] section")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key after file parsing, e.g. train.lr=1e-4")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    if checkpoint:
        p.add_argument("--checkpoint", required=True,
                       help="path to a saved checkpoints/best.ckpt")
    return p


def _load_tree(args, extra_sections=("ablate",)):
    """File -> overrides -> flag layers, normalized to a [train] section.

    The [ablate] section is tolerated by every subcommand so one experiment
    file can serve both `train` (base cell only) and `ablate`."""
    tree = load_config(args.config) if args.config else {}
    apply_overrides(tree, args.set)
    if "" in tree:
        # bare keys (sectionless file or `--set lr=...`) are training keys
        merged = dict(tree.pop(""))
        merged.update(tree.get("train", {}))
        tree["train"] = merged
    tree.setdefault("train", {})
    if args.seed is not None:
        tree["train"]["seed"] = args.seed
    if args.out is not None:
        tree["train"]["out_dir"] = args.out
    return tree, run_config_from_dict(tree, extra_sections=extra_sections)


def _say(args, text):
    if not args.quiet:
        print(text)


def _ensure_out(cfg, fallback):
    if cfg.out_dir:
        return cfg
    return replace(cfg, out_dir=fallback)


def _write_resolved(out_dir, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved"), "w") as fh:
        fh.write(format_config(run_config_to_dict(cfg)))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_train(argv):
    args = _parser("train").parse_args(argv)
    _, cfg = _load_tree(args)
    cfg = _ensure_out(cfg, os.path.join("out", f"{cfg.config_id()}-s{cfg.seed}"))
    result = train_autoencoder(cfg)
    _say(args, result.metrics.to_text())
    _say(args, f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_complete(argv):
    args = _parser("complete").parse_args(argv)
    _, cfg = _load_tree(args)
    if cfg.occlusion <= 0:
        raise ConfigError("complete needs train.occlusion > 0")
    cfg = _ensure_out(cfg, os.path.join("out", f"completion-{cfg.config_id()}-s{cfg.seed}"))
    result = train_completion(cfg)
    table, summary = eval_completion(
        result.model, result.records, class_names=cfg.families, seed=cfg.seed
    )
    table.write_csv(os.path.join(cfg.out_dir, "completion.csv"))
    _say(args, completion_table_text(summary, class_names=cfg.families))
    _say(args, f"checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_eval(argv):
    args = _parser("eval", checkpoint=True).parse_args(argv)
    if args.config or args.set or args.seed is not None:
        raise UsageError("eval takes its config from the checkpoint; "
                         "only --out/--quiet apply")
    model, cfg, task = load_run(args.checkpoint)
    records = build_dataset(cfg)
    table, _ = eval_reconstruction(
        model,
        records,
        class_names=cfg.families,
        param_count=count_parameters(model)[0],
        seed=cfg.seed,
        use_partial=task == "completion",
    )
    if args.out:
        _write_resolved(args.out, cfg)
        table.write_csv(os.path.join(args.out, "metrics.csv"))
    _say(args, table.to_text())
    return 0


def _cmd_classify(argv):
    p = _parser("classify", checkpoint=True)
    p.add_argument("--shuffle-labels", type=int, default=None, metavar="SEED",
                   help="permute training labels first (null experiment)")
    args = p.parse_args(argv)
    if args.config or args.set or args.seed is not None:
        raise UsageError("classify takes its config from the checkpoint; "
                         "only --out/--quiet/--shuffle-labels apply")
    model, cfg, _ = load_run(args.checkpoint)
    records = build_dataset(cfg)
    report = eval_unsupervised_classification(
        model, records, label_permutation_seed=args.shuffle_labels
    )
    lines = [
        f"test accuracy:      {report['accuracy']:.4f}",
        f"train accuracy:     {report['train_accuracy']:.4f}",
        f"centroid baseline:  {report['centroid_accuracy']:.4f}",
        f"chance level:       {1.0 / report['num_classes']:.4f}"
        f"  ({report['num_classes']} classes, {report['test_size']} test shapes)",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "classification.txt"), "w") as fh:
            fh.write(text)
    _say(args, text.rstrip("\n"))
    return 0


def _cmd_ablate(argv):
    args = _parser("ablate").parse_args(argv)
    tree, base = _load_tree(args, extra_sections=("ablate",))
    sweep = dict(tree.get("ablate", {}))
    seeds = sweep.pop("seeds", [base.seed])
    if sweep:
        raise ConfigError(f"unknown [ablate] keys: {sorted(sweep)}")
    if not isinstance(seeds, list) or not seeds \
            or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("[ablate] seeds must be a nonempty list of ints")
    out_dir = base.out_dir or os.path.join("out", "ablation")
    base = replace(base, out_dir="")

    table = MetricsTable()
    per_cell = {}
    order = []
    for seed in seeds:
        res = run_ablation(default_ablation_grid(replace(base, seed=seed)))
        for cid, cd in res.mean_cd.items():
            if cid not in per_cell:
                per_cell[cid] = []
                order.append(cid)
            per_cell[cid].append(cd)
            table.add(cid, f"seed{seed}", cd)
        _say(args, f"seed {seed}: " +
             "  ".join(f"{cid}={cd:.4f}" for cid, cd in res.mean_cd.items()))
    for cid in order:
        table.add(cid, "mean", float(np.mean(per_cell[cid])))

    _write_resolved(out_dir, replace(base, out_dir=out_dir))
    table.write_csv(os.path.join(out_dir, "metrics.csv"))
    _say(args, table.to_text())
    means = [float(np.mean(per_cell[cid])) for cid in order]
    for (ca, ma), (cb, mb) in zip(zip(order, means), zip(order[1:], means[1:])):
        verdict = "ok" if ordering_holds(ma, mb) else "violated"
        _say(args, f"{ca} >= {cb}: {verdict} ({ma:.4f} vs {mb:.4f})")
    return 0


def _cmd_export(argv):
    p = _parser("export", checkpoint=True)
    p.add_argument("--shapes", required=True,
                   help="comma-separated shape ids from the run's corpus")
    p.add_argument("--format", default="ply", choices=("ply", "xyz"),
                   help="cloud file format (default ply)")
    args = p.parse_args(argv)
    if args.config or args.set or args.seed is not None:
        raise UsageError("export takes its config from the checkpoint")
    model, cfg, task = load_run(args.checkpoint)
    records = {r.id: r for r in build_dataset(cfg)}
    out_dir = args.out or "out"
    exports = os.path.join(out_dir, "exports")
    os.makedirs(exports, exist_ok=True)
    fmt = "ply_ascii" if args.format == "ply" else "xyz_text"
    ext = ".ply" if args.format == "ply" else ".xyz"

    wanted = [s for s in (t.strip() for t in args.shapes.split(",")) if s]
    if not wanted:
        raise UsageError("--shapes lists no ids")
    unknown = [s for s in wanted if s not in records]
    table = MetricsTable()
    from .chamfer import chamfer  # local import keeps module load light

    for sid in wanted:
        if sid in unknown:
            continue
        rec = records[sid]
        inp = rec.partial if (task == "completion" and rec.partial is not None) else rec.cloud
        recon = predict_clouds(model, inp[None].astype(np.float32))[0]
        save_cloud(os.path.join(exports, sid + ".input" + ext), inp, fmt)
        save_cloud(os.path.join(exports, sid + ".recon" + ext), recon, fmt)
        save_cloud(os.path.join(exports, sid + ".gt" + ext), rec.cloud, fmt)
        cd = chamfer(recon.astype(np.float64), rec.cloud.astype(np.float64)).value
        table.add("model", sid, cd)
        _export_seed_coords(model, rec, os.path.join(exports, sid + ".seeds.csv"))
    table.write_csv(os.path.join(exports, "metrics.csv"))
    _say(args, f"wrote {len(wanted) - len(unknown)} shape triples to {exports}")
    if unknown:
        print("unknown shape ids: " + ", ".join(unknown), file=sys.stderr)
        return 1
    return 0


def _export_seed_coords(model, rec, path):
    """Planar seed CSV for 2-D seed decoders; other decoders have no
    planar coordinates and are skipped."""
    source = getattr(model.decoder, "source", None)
    if source is None or source.dim != 2:
        return
    with ad.no_grad():
        theta = model.encoder(rec.cloud[None].astype(np.float32))
        coords = source.planar_coords(theta.data[0])
    with open(path, "w") as fh:
        for u, v in np.asarray(coords, dtype=np.float64):
            fh.write(f"{float(u)!r},{float(v)!r}\n")


def _cmd_synth(argv):
    p = _parser("synth")
    p.add_argument("--format", default="ply", choices=("ply", "xyz"),
                   help="cloud file format (default ply)")
    args = p.parse_args(argv)
    _, cfg = _load_tree(args)
    out_dir = cfg.out_dir or os.path.join("out", "synth")
    records = build_dataset(cfg)
    fmt = "ply_ascii" if args.format == "ply" else "xyz_text"
    ext = ".ply" if args.format == "ply" else ".xyz"
    cloud_dir = os.path.join(out_dir, "clouds")
    write_manifest(records, os.path.join(out_dir, "manifest.tsv"), cloud_dir, fmt)
    n_partial = 0
    for rec in records:
        if rec.partial is not None:
            save_cloud(os.path.join(cloud_dir, rec.id + ".partial" + ext),
                       rec.partial, fmt)
            n_partial += 1
    _write_resolved(out_dir, replace(cfg, out_dir=out_dir))
    msg = f"wrote {len(records)} clouds"
    if n_partial:
        msg += f" (+{n_partial} partials)"
    _say(args, msg + f" and manifest.tsv to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "classify": _cmd_classify,
    "complete": _cmd_complete,
    "ablate": _cmd_ablate,
    "export": _cmd_export,
    "synth": _cmd_synth,
}


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    raw = os.environ.get("SEEDCLOUD_THREADS")
    try:
        if raw is not None and (not raw.isdigit() or int(raw) < 1):
            raise UsageError(
                f"SEEDCLOUD_THREADS must be a positive integer, got '{raw}'"
            )
        if not argv or argv[0] in ("-h", "--help"):
            print(_USAGE, end="")
            return 0
        name = argv[0]
        handler = _HANDLERS.get(name)
        if handler is None:
            close = difflib.get_close_matches(name, _HANDLERS, n=1)
            hint = f" (did you mean '{close[0]}'?)" if close else ""
            raise UsageError(f"unknown subcommand '{name}'{hint}")
        return handler(argv[1:])
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError, DegenerateInputError, NumericsError,
            TrainingDiverged, SeedCloudError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
