"""Command-line entry point: ingest, preprocess, train, eval, infer, ablate, synth.

Configuration precedence (lowest to highest): built-in defaults, the INI file
given by ``--config`` (sections ``[dsp]``, ``[model]``, ``[train]``), then
command-line flags. Every command prints the resolved configuration and
writes it to ``<out>/effective_config.json`` before doing any work.
"""

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .data import ensure_cache, load_cache, read_manifest, scan_dataset, split, write_manifest
from .dsp import DSPConfig, clip_features
from .errors import MTBCAError
from .metrics import confusion, metrics, write_confusion_csv, write_metrics_json
from .model import ModelConfig, count_params
from .train import TrainConfig, train
from .wav import read_wav

log = logging.getLogger("mtbca")

CHECKPOINT_NAME = "checkpoint.mtbca"

# (name, channel attention, frequency attention, reconstruction, reference accuracy)
VARIANTS = (
    ("CNN", False, False, False, 0.91),
    ("Only-Classify", False, True, False, 0.89),
    ("MT-CNN", False, True, True, 0.93),
    ("MT-BCA-CNN", True, True, True, 0.97),
)


class CommandError(MTBCAError):
    pass


# configuration


def _coerce(value, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace("x", ",").split(",") if v.strip())
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def _section_overrides(parser, section, cls):
    if not parser.has_section(section):
        return {}
    fields = {f.name: f.default for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in fields:
            raise CommandError(f"unknown key '{key}' in [{section}] (valid: {', '.join(fields)})")
        try:
            out[key] = _coerce(raw, fields[key])
        except ValueError as exc:
            raise CommandError(f"[{section}] {key}: {exc}") from None
    return out


def resolve_config(args):
    """Merge defaults, the INI file and flags into ``{"dsp", "model", "train"}`` override dicts."""
    parser = configparser.ConfigParser()
    if args.config:
        if not os.path.isfile(args.config):
            raise CommandError(f"config file not found: {args.config}")
        parser.read(args.config)
    dsp = _section_overrides(parser, "dsp", DSPConfig)
    model = _section_overrides(parser, "model", ModelConfig)
    trn = _section_overrides(parser, "train", TrainConfig)
    if getattr(args, "alpha", None) is not None:
        dsp["alpha"] = args.alpha
    if args.seed is not None:
        trn["seed"] = args.seed
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size")):
        if getattr(args, flag, None) is not None:
            trn[key] = getattr(args, flag)
    for flag, key in (
        ("no_channel_attention", "enable_channel_attention"),
        ("no_frequency_attention", "enable_frequency_attention"),
        ("no_reconstruction", "enable_reconstruction"),
    ):
        if getattr(args, flag, False):
            model[key] = False
    try:
        dsp_cfg = DSPConfig(**dsp)
        train_cfg = TrainConfig(**trn)
    except (TypeError, ValueError) as exc:
        raise CommandError(f"invalid configuration: {exc}") from None
    return {"dsp": dsp_cfg, "model": model, "train": train_cfg}


def echo_config(args, resolved, extra=None):
    """Print and persist the fully resolved configuration."""
    payload = {
        "command": args.command,
        "seed": resolved["train"].seed,
        "out": args.out,
        "dsp": dataclasses.asdict(resolved["dsp"]),
        "model_overrides": resolved["model"],
        "train": resolved["train"].to_dict(),
        **(extra or {}),
    }
    text = json.dumps(payload, indent=2, sort_keys=True, default=list)
    print("effective config:")
    print(text)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "effective_config.json"), "w") as fh:
        fh.write(text + "\n")
    return payload


def model_config_for(cache, overrides):
    try:
        return ModelConfig(**{"num_classes": len(cache.class_names), "input_hw": tuple(cache.shape), **overrides})
    except (TypeError, ValueError) as exc:
        raise CommandError(f"invalid model configuration: {exc}") from None


# commands


def cmd_ingest(args, cfg):
    echo_config(args, cfg, {"root": args.root, "ratio": args.ratio})
    if not os.path.isdir(args.root):
        raise CommandError(f"dataset root does not exist: {args.root}")
    manifest = split(scan_dataset(args.root), args.ratio, cfg["train"].seed)
    path = args.manifest or os.path.join(args.out, "manifest.tsv")
    write_manifest(manifest, path)
    counts = manifest.split_counts()
    n_train = sum(c["train"] for c in counts.values())
    n_test = sum(c["test"] for c in counts.values())
    print(f"{len(manifest.class_names)} classes, {len(manifest.entries)} clips ({n_train} train / {n_test} test)")
    for name, c in counts.items():
        print(f"  {name}: {c['train']} train, {c['test']} test")
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} unreadable file(s):")
        for rel, why in manifest.skipped:
            print(f"  {rel}: {why}")
    print(f"manifest written to {path}")


def cmd_preprocess(args, cfg):
    echo_config(args, cfg, {"manifest": args.manifest, "fingerprint": cfg["dsp"].fingerprint()})
    manifest = read_manifest(args.manifest)
    path = args.cache or os.path.join(args.out, "features.cache")
    cache, reason = ensure_cache(manifest, cfg["dsp"], path, args.workers)
    if reason is None:
        print(f"cache up to date ({cache.fingerprint}); reusing {path}")
    else:
        print(f"rebuilding cache: {reason}")
    for rel, why in cache.failures:
        print(f"  failed: {rel}: {why}")
    clips = len(set(int(e) for e in cache.entry))
    print(f"{len(cache)} segments from {clips} clips ({len(cache.failures)} failed) -> {path}")


def cmd_train(args, cfg):
    cache = load_cache(args.cache)
    mcfg = model_config_for(cache, cfg["model"])
    echo_config(args, cfg, {"cache": args.cache, "model": mcfg.to_dict(), "params": count_params(mcfg)})
    x, y = cache.subset("train")
    if len(y) == 0:
        raise CommandError("cache has no training records (split the manifest before preprocessing)")
    result = train(mcfg, x, y, cfg["train"])
    meta = {"class_names": cache.class_names, "dsp_config": cache.dsp_config, "fingerprint": cache.fingerprint}
    ckpt = os.path.join(args.out, CHECKPOINT_NAME)
    result.save(ckpt, meta)
    result.history.to_csv(os.path.join(args.out, "history.csv"))
    if not args.no_plots:
        from .plotting import plot_history

        plot_history(result.history, os.path.join(args.out, "history.png"))
    last = result.history.records[-1]
    print(f"trained {len(result.history)} epochs; final L_total {last.L_total:.4f}, train acc {last.acc:.3f}")
    print(f"checkpoint written to {ckpt}")


def _check_compatible(model, meta, cache):
    cfg = model.config
    if tuple(cfg.input_hw) != tuple(cache.shape):
        raise CommandError(f"mismatch in input_hw: checkpoint {list(cfg.input_hw)} vs cache {list(cache.shape)}")
    if cfg.num_classes != len(cache.class_names):
        raise CommandError(f"mismatch in num_classes: checkpoint {cfg.num_classes} vs cache {len(cache.class_names)}")
    if meta.get("class_names") not in (None, cache.class_names):
        raise CommandError("mismatch in class_names between checkpoint and cache")
    if meta.get("fingerprint") not in (None, cache.fingerprint):
        raise CommandError(f"mismatch in dsp fingerprint: checkpoint {meta['fingerprint']} vs cache {cache.fingerprint}")


def evaluate(model, cache, which="test"):
    x, y = cache.subset(which)
    if len(y) == 0:
        raise CommandError(f"cache has no '{which}' records")
    pred = model.predict_proba(x).argmax(axis=1)
    cm = confusion(pred, y, model.config.num_classes)
    return cm, metrics(cm)


def cmd_eval(args, cfg):
    echo_config(args, cfg, {"checkpoint": args.checkpoint, "cache": args.cache, "split": args.split})
    model, _, meta = load_checkpoint(args.checkpoint)
    cache = load_cache(args.cache)
    _check_compatible(model, meta, cache)
    cm, report = evaluate(model, cache, args.split)
    write_metrics_json(os.path.join(args.out, "metrics.json"), cm, report, cache.class_names)
    write_confusion_csv(os.path.join(args.out, "confusion.csv"), cm, cache.class_names)
    if not args.no_plots:
        from .plotting import plot_confusion

        plot_confusion(cm, cache.class_names, os.path.join(args.out, "confusion.png"))
    print(f"accuracy {report.accuracy:.4f}  macro F1 {report.macro_f1:.4f}  ({int(cm.sum())} {args.split} segments)")


def infer_clip(model, meta, wav_path):
    """Clip-level class distribution: mean of per-segment softmax outputs."""
    dsp = DSPConfig(**meta["dsp_config"]) if meta.get("dsp_config") else DSPConfig()
    feats = clip_features(read_wav(wav_path), dsp)
    probs = model.predict_proba(np.stack(feats)).astype(np.float64)
    return probs.mean(axis=0), len(feats)


def cmd_infer(args, cfg):
    echo_config(args, cfg, {"checkpoint": args.checkpoint, "wav": args.wav, "top_k": args.top_k})
    model, _, meta = load_checkpoint(args.checkpoint)
    names = meta.get("class_names") or [str(i) for i in range(model.config.num_classes)]
    dist, n_seg = infer_clip(model, meta, args.wav)
    k = max(1, min(args.top_k, len(names)))
    top = np.argsort(-dist, kind="stable")[:k]
    entries = [{"rank": r + 1, "label": names[i], "class_index": int(i), "probability": float(dist[i])} for r, i in enumerate(top)]
    for e in entries:
        print(f"{e['rank']:>2}. {e['label']:<24} {e['probability']:.4f}")
    out = {"wav": args.wav, "segments": n_seg, "top_k": entries, "probabilities": dist.tolist()}
    with open(os.path.join(args.out, "infer.json"), "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")


ABLATION_COLUMNS = ("variant", "CA", "Classify", "Recon", "accuracy", "F1", "params", "reference_accuracy", "gap")


def run_ablation(cache, base_overrides, train_cfg):
    """Train and test every variant with the same seed; failures are recorded, not raised."""
    x, y = cache.subset("train")
    rows = []
    for name, ca, fa, recon, ref in VARIANTS:
        overrides = {
            **base_overrides,
            "enable_channel_attention": ca,
            "enable_frequency_attention": fa,
            "enable_reconstruction": recon,
        }
        row = {"variant": name, "CA": "Y" if ca else "N", "Classify": "Y" if fa else "N", "Recon": "Y" if recon else "N"}
        try:
            mcfg = model_config_for(cache, overrides)
            row["params"] = count_params(mcfg)
            result = train(mcfg, x, y, train_cfg)
            _, report = evaluate(result.model, cache, "test")
            row.update(accuracy=report.accuracy, F1=report.macro_f1)
            row.update(reference_accuracy=ref, gap=report.accuracy - ref)
        except MTBCAError as exc:
            log.error("variant %s failed: %s", name, exc)
            row.update(accuracy=None, F1=None, error=str(exc))
        rows.append(row)
    return rows


def cmd_ablate(args, cfg):
    cache = load_cache(args.cache)
    echo_config(args, cfg, {"cache": args.cache, "variants": [v[0] for v in VARIANTS]})
    rows = run_ablation(cache, cfg["model"], cfg["train"])
    path = os.path.join(args.out, "ablation.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (f"{r[c]:.6f}" if isinstance(r.get(c), float) else r[c]) for c in ABLATION_COLUMNS])
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    if not args.no_plots:
        from .plotting import plot_ablation

        plot_ablation([{**r, "f1": r.get("F1")} for r in rows], os.path.join(args.out, "ablation.png"))
    print(f"{'variant':<14} CA Cls Rec  accuracy      F1   params  ref   gap")
    for r in rows:
        if r.get("accuracy") is None:
            print(f"{r['variant']:<14} failed: {r.get('error')}")
            continue
        print(
            f"{r['variant']:<14} {r['CA']:>2} {r['Classify']:>3} {r['Recon']:>3}  {r['accuracy']:8.4f} {r['F1']:7.4f} "
            f"{r['params']:8d}  {r['reference_accuracy']:.2f} {r['gap']:+.2f}"
        )
    flagged = [r["variant"] for r in rows if r.get("gap") is not None and r["gap"] < 0]
    if flagged:
        print(f"note: below reference accuracy: {', '.join(flagged)} (informational)")
    print(f"table written to {path}")
    if any(r.get("accuracy") is None for r in rows):
        raise CommandError("one or more variants failed; see table")


def cmd_synth(args, cfg):
    from .synth import write_tone_dataset

    echo_config(args, cfg, {"root": args.root, "classes": args.classes, "clips": args.clips})
    freqs = write_tone_dataset(args.root, args.classes, args.clips, args.duration, cfg["train"].seed, cfg["dsp"])
    print(f"wrote {args.classes} classes x {args.clips} clips to {args.root}")
    print("carriers (Hz): " + ", ".join(f"{f:.0f}" for f in freqs))


# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [dsp], [model], [train] sections")
    common.add_argument("--seed", type=int, help="seed for splitting, initialisation and shuffling")
    common.add_argument("--out", metavar="DIR", default="runs", help="output directory (default: runs)")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    p = argparse.ArgumentParser(prog="mtbca", description="Few-shot underwater bioacoustic classifier.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="scan a species-per-directory tree and split it")
    s.add_argument("--root", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--manifest", metavar="PATH", help="default: <out>/manifest.tsv")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("preprocess", parents=[common], help="build (or reuse) the feature cache")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cache", metavar="PATH", help="default: <out>/features.cache")
    s.add_argument("--alpha", type=float, help="spectral-subtraction oversubtraction factor")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_preprocess)

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--epochs", type=int)
    model_flags.add_argument("--batch-size", type=int)
    model_flags.add_argument("--no-channel-attention", action="store_true")
    model_flags.add_argument("--no-frequency-attention", action="store_true")
    model_flags.add_argument("--no-reconstruction", action="store_true")

    s = sub.add_parser("train", parents=[common, model_flags], help="train on the cache's train split")
    s.add_argument("--cache", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics and confusion matrix on a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--cache", required=True)
    s.add_argument("--split", choices=("train", "test"), default="test")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", parents=[common], help="top-k labels for one WAV file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--top-k", type=int, default=5)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("ablate", parents=[common], help="train and compare the four model variants")
    s.add_argument("--cache", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic pulsed-tone dataset")
    s.add_argument("--root", required=True)
    s.add_argument("--classes", type=int, default=27)
    s.add_argument("--clips", type=int, default=8)
    s.add_argument("--duration", type=float, default=1.5)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except MTBCAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
