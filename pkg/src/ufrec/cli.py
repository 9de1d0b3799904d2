"""Command line entry point: ``ufrec <command> [options]``.

Commands chain through artifact directories::

    ufrec prepare   --data raw.tsv --out run/data
    ufrec partition --data run/data --out run/data
    ufrec train     --data run/data --out run/model --seed 7
    ufrec evaluate  --data run/data --checkpoint run/model/model.ckpt --out run/eval

Exit status is 0 on success, 1 on invalid input or a missing upstream file,
and 2 when a run fails part way.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields

from . import _accel
from .config import TrainConfig, apply_ablations, build_config, coerce, read_config_file
from .data import (
    build_sequences,
    k_core_filter,
    load_interactions,
    load_split,
    save_id_maps,
    save_split,
    split_leave_one_out,
    write_interactions,
)
from .evaluator import case_dump, evaluate, study_sweep, time_sensitivity, write_csv
from .item_enhancer import save_neighbors
from .model import UFRecModel
from .partition import compute_partition, load_partition, save_partition
from .trainer import TrainingError, train, write_log

log = logging.getLogger("ufrec")

COMMANDS = ("prepare", "partition", "train", "evaluate", "study", "sensitivity", "case", "synth")
# keys a stored checkpoint lets the caller change at evaluation time
EVAL_OVERRIDES = ("eval_seed", "eval_negatives", "uniform_ratio", "frequent_ratio", "partition_mode")


class MissingInput(Exception):
    def __init__(self, path):
        super().__init__(f"missing input: {path}")
        self.path = path


def _require(path):
    if not os.path.exists(path):
        raise MissingInput(os.path.abspath(path))
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _split_path(data):
    if data is None:
        raise ValueError("--data is required")
    return _require(os.path.join(data, "split.json") if os.path.isdir(data) else data)


def _data_dir(data):
    return data if os.path.isdir(data) else os.path.dirname(data) or "."


def _parse_ks(text):
    try:
        ks = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValueError(f"--k expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ValueError("--k needs at least one positive cutoff")
    return ks


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _config_flag(name):
    return "--" + name.replace("_", "-")


def _add_common(p):
    defaults = TrainConfig()
    p.add_argument("--data", help="input file or artifact directory")
    p.add_argument("--config", help="JSON or key=value config file")
    p.add_argument("--out", default=".", help="output directory (default: %(default)s)")
    p.add_argument("--ablate", default="", help="switch off components, e.g. b,d (a=time channels, "
                   "b=sequence enhancement, c=item enhancement, d=popularity/similarity terms)")
    p.add_argument("--mode", choices=("sampled", "full"), default="sampled",
                   help="ranking protocol (default: %(default)s)")
    p.add_argument("--k", default="10,20", help="metric cutoffs (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("config keys (defaults < --config file < flags)")
    for f in fields(TrainConfig):
        default = getattr(defaults, f.name)
        group.add_argument(_config_flag(f.name), dest=f"cfg_{f.name}", default=None, metavar="X",
                           help=f"default: {default!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="ufrec", description="Sequential recommendation lab.",
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", allow_abbrev=False, help="k-core filter and leave-one-out split of a raw TSV log")
    _add_common(p)
    p.add_argument("--k-user", type=int, default=5, help="min interactions per user (default: %(default)s)")
    p.add_argument("--k-item", type=int, default=5, help="min interactions per item (default: %(default)s)")

    p = sub.add_parser("partition", allow_abbrev=False, help="uniform/non-uniform and frequent/less-frequent labels")
    _add_common(p)

    p = sub.add_parser("train", allow_abbrev=False, help="fit a model; writes model.ckpt, train_log.csv, neighbors.json")
    _add_common(p)
    p.add_argument("--partition", help="use this partition.json instead of recomputing")

    p = sub.add_parser("evaluate", allow_abbrev=False, help="metrics overall and per subset")
    _add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default: <data>/model.ckpt)")
    p.add_argument("--partition", help="use this partition.json instead of recomputing")
    p.add_argument("--target", choices=("test", "valid"), default="test")

    p = sub.add_parser("study", allow_abbrev=False, help="metrics per subset across partition ratios")
    _add_common(p)
    p.add_argument("--checkpoint", help="model checkpoint (default: <data>/model.ckpt)")
    p.add_argument("--retrain", action="store_true", help="train a fresh model per grid cell")
    p.add_argument("--sequence-grid", default="0.3,0.4,0.5,0.6,0.7,0.8")
    p.add_argument("--item-grid", default="0.4,0.5,0.6,0.7,0.8,0.9")

    p = sub.add_parser("sensitivity", allow_abbrev=False, help="interval-only minus context-only, per subset")
    _add_common(p)

    p = sub.add_parser("case", allow_abbrev=False, help="dump the sequence encoding and target score of one user")
    _add_common(p)
    p.add_argument("--checkpoint", help="one or more comma-separated checkpoints (one per variant)")
    p.add_argument("--user", type=int, required=True, help="dense user id")
    p.add_argument("--item", type=int, help="target item id (default: the user's test item)")

    p = sub.add_parser("synth", allow_abbrev=False, help="write a synthetic interaction log with planted structure")
    _add_common(p)
    p.add_argument("--num-users", type=int, default=300)
    p.add_argument("--num-items", type=int, default=200)
    return parser


def resolve_config(args, base=None):
    file_values = read_config_file(_require(args.config)) if args.config else {}
    cli_values = {}
    for f in fields(TrainConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            cli_values[f.name] = coerce(f.name, raw)
    if base is not None:
        values = {**file_values, **cli_values}
        return base.replace(**{k: v for k, v in values.items() if k in EVAL_OVERRIDES})
    values = apply_ablations({**file_values, **cli_values}, args.ablate)
    return build_config(values)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class Run:
    """Collects inputs/outputs for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = argv
        self.inputs, self.outputs = [], []
        self.config = None
        self.seeds = {}
        self.start = time.perf_counter()
        self.started_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        os.makedirs(args.out, exist_ok=True)

    def read(self, path):
        self.inputs.append(_require(path))
        return path

    def out(self, name):
        path = os.path.join(self.args.out, name)
        self.outputs.append(path)
        return path

    def write_manifest(self):
        doc = {
            "command": self.args.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": {p: _sha256(p) for p in self.inputs},
            "outputs": {p: _sha256(p) for p in self.outputs if os.path.isfile(p)},
            "started_at": self.started_at,
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
            "numba": _accel.USE_NUMBA,
        }
        with open(os.path.join(self.args.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


def cmd_synth(run):
    from .synth import generate

    cfg = resolve_config(run.args)
    rows, regular = generate(num_users=run.args.num_users, num_items=run.args.num_items, seed=cfg.seed)
    write_interactions(run.out("interactions.tsv"), rows)
    with open(run.out("regular_users.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(f"{u}\n" for u in sorted(regular)))
    run.seeds = {"data": cfg.seed}


def cmd_prepare(run):
    args = run.args
    if args.data is None:
        raise ValueError("--data is required")
    cfg = resolve_config(args)
    rows = load_interactions(run.read(args.data))
    kept = k_core_filter(rows, args.k_user, args.k_item)
    if not kept:
        raise ValueError(f"no interactions survive k-core filtering (k_user={args.k_user}, k_item={args.k_item})")
    seqs, maps = build_sequences(kept)
    split = split_leave_one_out(seqs, num_items=maps.num_items, order=cfg.split_order)
    save_split(run.out("split.json"), split)
    save_id_maps(run.out("user_map.tsv"), run.out("item_map.tsv"), maps)
    run.config = {"k_user": args.k_user, "k_item": args.k_item, "split_order": cfg.split_order}
    print(f"{len(rows)} interactions -> {len(kept)} after k-core; "
          f"{len(split.users)} users, {split.num_items} items")


def _load_split(run):
    return load_split(run.read(_split_path(run.args.data)))


def cmd_partition(run):
    cfg = resolve_config(run.args)
    split = _load_split(run)
    part = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
    save_partition(run.out("partition.json"), part)
    run.config = {"uniform_ratio": cfg.uniform_ratio, "frequent_ratio": cfg.frequent_ratio,
                  "mode": cfg.partition_mode}
    print(f"{part.sequences.num_uniform} uniform of {len(part.sequences.users)} sequences; "
          f"{int(part.items.frequent.sum())} frequent of {part.items.num_items} items")


def _partition_for(run, split, cfg):
    path = getattr(run.args, "partition", None)
    if path:
        return load_partition(run.read(path))
    return compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)


def cmd_train(run):
    cfg = resolve_config(run.args)
    split = _load_split(run)
    part = _partition_for(run, split, cfg)
    run.config = cfg.to_dict()
    run.seeds = {"train": cfg.seed, "eval": cfg.eval_seed}
    best, rows, data = train(split, cfg, part, on_epoch=lambda r, m: log.info(
        "epoch %d val NDCG@%d %.4f", r["epoch"], cfg.val_k, r["val_ndcg10"]))
    best.save(run.out("model.ckpt"))
    write_log(run.out("train_log.csv"), rows)
    save_neighbors(run.out("neighbors.json"), data.candidates)
    save_partition(run.out("partition.json"), data.partition)
    print(f"trained {len(rows)} epochs; best val NDCG@{cfg.val_k} "
          f"{max(r['val_ndcg10'] for r in rows):.4f}")


def _checkpoint_path(run):
    path = run.args.checkpoint
    if path is None:
        if run.args.data is None:
            raise ValueError("--checkpoint or --data is required")
        path = os.path.join(_data_dir(run.args.data), "model.ckpt")
    return run.read(path)


def _load_model(run, path):
    model = UFRecModel.load(path)
    cfg = resolve_config(run.args, base=model.cfg)
    model.cfg = cfg
    return model, cfg


def cmd_evaluate(run):
    ckpt = _checkpoint_path(run)
    split = _load_split(run)
    model, cfg = _load_model(run, ckpt)
    part = _partition_for(run, split, cfg)
    model.partition = part
    ks = _parse_ks(run.args.k)
    report = evaluate(model, split, part, mode=run.args.mode, ks=ks, target=run.args.target,
                      seed=cfg.eval_seed, num_negatives=cfg.eval_negatives)
    run.outputs += list(report.write(run.args.out))
    run.config = {**cfg.to_dict(), "mode": run.args.mode, "ks": list(ks), "target": run.args.target}
    run.seeds = {"train": cfg.seed, "eval": cfg.eval_seed}
    for row in report.rows():
        k0 = ks[0]
        print(f"{row['scope']:>4} n={row['count']:<6} NDCG@{k0} {row[f'NDCG@{k0}']:.4f}  "
              f"HR@{k0} {row[f'HR@{k0}']:.4f}  MRR@{k0} {row[f'MRR@{k0}']:.4f}")


def _grid(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def cmd_study(run):
    args = run.args
    split = _load_split(run)
    ks = _parse_ks(args.k)
    if args.retrain:
        cfg = resolve_config(args)

        def cell(u_ratio, f_ratio):
            c = cfg.replace(uniform_ratio=u_ratio, frequent_ratio=f_ratio)
            best, _, data = train(split, c)
            return evaluate(best, split, data.partition, mode=args.mode, ks=ks,
                            seed=c.eval_seed, num_negatives=c.eval_negatives)

        base = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
        rows = study_sweep(cell, split, base, _grid(args.sequence_grid), _grid(args.item_grid),
                           retrain_per_cell=True, mode=args.mode)
    else:
        model, cfg = _load_model(run, _checkpoint_path(run))
        base = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
        model.partition = base
        report = evaluate(model, split, base, mode=args.mode, ks=ks, seed=cfg.eval_seed,
                          num_negatives=cfg.eval_negatives)
        rows = study_sweep(report, split, base, _grid(args.sequence_grid), _grid(args.item_grid),
                           mode=args.mode)
    write_csv(run.out("study.csv"), rows)
    run.config = {**cfg.to_dict(), "retrain_per_cell": args.retrain, "mode": args.mode}
    run.seeds = {"train": cfg.seed, "eval": cfg.eval_seed}
    print(f"{len(rows)} sweep rows")


def cmd_sensitivity(run):
    args = run.args
    cfg = resolve_config(args)
    split = _load_split(run)
    part = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
    ks = _parse_ks(args.k)
    reports = {}
    for channel in ("interval", "context"):
        c = cfg.replace(force_channel=channel)
        best, rows, _ = train(split, c, part)
        best.save(run.out(f"model_{channel}.ckpt"))
        write_log(run.out(f"train_log_{channel}.csv"), rows)
        reports[channel] = evaluate(best, split, part, mode=args.mode, ks=ks, seed=c.eval_seed,
                                    num_negatives=c.eval_negatives)
    rows = time_sensitivity(reports["interval"], reports["context"])
    write_csv(run.out("sensitivity.csv"), rows)
    run.config = {**cfg.to_dict(), "mode": args.mode, "ks": list(ks)}
    run.seeds = {"train": cfg.seed, "eval": cfg.eval_seed}
    for r in rows:
        print(f"{r['scope']:>4} {r['metric']:<8} {r['difference']:+.4f}")


def variant_name(cfg):
    off = [k for k, name in (("a", "time_multi"), ("b", "seq_enh"), ("c", "item_enh"), ("d", "pop_sim"))
           if not getattr(cfg, name)]
    name = "full" if not off else "wo-" + "".join(off)
    return f"{name}-{cfg.force_channel}" if cfg.force_channel else name


def cmd_case(run):
    args = run.args
    split = _load_split(run)
    if args.user not in split.train:
        raise ValueError(f"unknown user {args.user}")
    paths = args.checkpoint.split(",") if args.checkpoint else [None]
    seen = set()
    for p in paths:
        run.args.checkpoint = p
        model, cfg = _load_model(run, _checkpoint_path(run))
        model.partition = compute_partition(split, cfg.uniform_ratio, cfg.frequent_ratio, cfg.partition_mode)
        variant = variant_name(cfg)
        if variant in seen:
            variant = f"{variant}{len(seen)}"
        seen.add(variant)
        item = args.item if args.item is not None else split.holdout(args.user, "test").item
        path, score = case_dump(model, split, args.user, item, args.out, variant)
        run.outputs += [path, path[:-4] + ".json"]
        run.config = cfg.to_dict()
        print(f"{variant}: user {args.user} item {item} score {score:.6f} -> {path}")


HANDLERS = {
    "prepare": cmd_prepare, "partition": cmd_partition, "train": cmd_train, "evaluate": cmd_evaluate,
    "study": cmd_study, "sensitivity": cmd_sensitivity, "case": cmd_case, "synth": cmd_synth,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    _accel.set_threads(os.environ.get("UFREC_THREADS"))
    try:
        run = Run(args, argv)
        HANDLERS[args.command](run)
        run.write_manifest()
    except MissingInput as exc:
        print(f"error: missing file {exc.path}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, FloatingPointError, RuntimeError, MemoryError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
