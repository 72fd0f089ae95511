"""Command-line entry point: ``eegmobile <command> ...``.

Commands: fixtures, ingest, train, eval, bench-io, spectrogram. Every
failure is printed as one ``error: [category] message`` line on stderr and
the exit status is nonzero iff at least one such line was printed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .cache import file_checksum, open_cache
from .config import RunConfig, write_manifest
from .dataset import PAPER_EDF20_SAMPLES, build_folds, ingest, pair_sleep_edf
from .edf import read_channel
from .errors import EEGMobileError
from .fixtures import make_corpus
from .metrics import format_table
from .nn.model import build_micronet, load_checkpoint
from .spectro import epoch_to_image, save_png
from .train import CacheSource, evaluate, run_cv

log = logging.getLogger("eegmobile")

CACHE_ENV = "EEGM_CACHE"


class _Errors:
    def __init__(self):
        self.count = 0

    def __call__(self, category: str, message: str) -> None:
        self.count += 1
        print(f"error: [{category}] {message}", file=sys.stderr)


def _categorize(exc: BaseException) -> str:
    if isinstance(exc, EEGMobileError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def _overrides(args, mapping: dict) -> dict:
    out = {}
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def _cache_path(args, fallback=None) -> Path:
    path = args.cache or os.environ.get(CACHE_ENV) or fallback
    if path is None:
        raise ValueError(f"no cache path: pass --cache or set {CACHE_ENV}")
    return Path(path)


# -- commands --------------------------------------------------------------------


def cmd_fixtures(args, err) -> None:
    files = make_corpus(args.out, args.subjects, tuple(args.nights), args.epochs_per_night,
                        seed=args.seed or 0, excluded_per_night=args.excluded)
    for f in files:
        print(f"{f.psg.name}  {f.hypnogram.name}  epochs={len(f.stages)}")


def cmd_ingest(args, err) -> None:
    cfg = RunConfig.resolve(args.config, _overrides(args, {"seed": "seed", "workers": "ingest.workers",
                                                            "channel": "ingest.channel"}))
    data_dir = Path(args.data_dir)
    cache_path = _cache_path(args, data_dir / "spectrograms.egmc")
    recs, pairing_errors = pair_sleep_edf(data_dir, cfg["ingest.channel"])
    for line in pairing_errors:
        err("dataset", line)
    if not recs:
        err("dataset", f"no PSG/hypnogram pairs found in {data_dir}")
        return

    def on_error(rec, exc):
        err(_categorize(exc.cause if hasattr(exc, "cause") else exc), f"{rec.psg.name}: {exc}")

    t0 = time.perf_counter()
    index, summaries = ingest(
        recs, cfg.spectro(), cfg.render(), cache_path, int(cfg["ingest.workers"]),
        trim_minutes=cfg.trim_minutes,
        manifest_path=cache_path.with_name(cache_path.name + ".ingest.jsonl"),
        on_error=on_error,
    )
    elapsed = time.perf_counter() - t0
    inputs = [p for r in recs for p in (r.psg, r.hypnogram) if p is not None]
    write_manifest(cache_path.with_name(cache_path.name + ".manifest.json"), cfg, inputs, "ingest",
                   {"cache_sha256": file_checksum(cache_path), "entries": len(index)})
    stages = Counter()
    for s in summaries:
        stages.update(s.stage_counts)
        print(f"{s.subject_id} night {s.night}: emitted {s.emitted} excluded {s.excluded} "
              f"trimmed {s.trimmed} truncated {s.truncated}")
    total = sum(s.emitted for s in summaries)
    print("stages: " + " ".join(f"{k}={stages.get(k, 0)}" for k in ("W", "N1", "N2", "N3", "REM")))
    print(f"total {total} epochs in {elapsed:.1f}s -> {cache_path}")
    subjects = {s.subject_id for s in summaries}
    if len(subjects) == 20 and all(s.startswith("SC") for s in subjects):
        trim = cfg.trim_minutes
        rule = "no wake trimming" if trim is None else f"wake trimmed to {trim:g} min around sleep"
        print(f"Sleep-EDF20 reference count {PAPER_EDF20_SAMPLES}; this run {total} "
              f"(delta {total - PAPER_EDF20_SAMPLES:+d}; {rule})")


def _verify_all(cache) -> None:
    for key in cache.keys():
        cache.get(key)


def cmd_train(args, err) -> None:
    cfg = RunConfig.resolve(args.config, _overrides(args, {"seed": "seed", "epochs": "train.epochs",
                                                            "input_size": "model.input_size"}))
    if args.strict:
        cfg.values["train.strict"] = "true"
    cache_path = _cache_path(args)
    cache = open_cache(cache_path, args.tier)
    if args.tier == "disk":
        _verify_all(cache)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = build_folds([k[0] for k in cache.keys()], args.k)
    mcfg = cfg.model()
    train_cfg = cfg.train()
    result = run_cv(lambda fold: build_micronet(mcfg, seed=cfg.seed + fold), plan, cache, train_cfg, out)
    write_manifest(out / "manifest.json", cfg, [cache_path], "train", {"k": args.k})
    rows = [(f"fold {r.fold}", r.report) for r in result.folds]
    print(format_table(rows))
    agg = result.aggregate
    print(f"aggregate: ACC {100 * agg['accuracy']:.2f}  MF1 {100 * agg['macro_f1']:.2f}  "
          f"kappa {agg['kappa']:.3f}")


def cmd_eval(args, err) -> None:
    model = load_checkpoint(args.checkpoint)
    cache = open_cache(_cache_path(args), args.tier)
    keys = sorted(cache.keys())
    if args.subjects:
        wanted = set(args.subjects)
        keys = [k for k in keys if k[0] in wanted]
    if not keys:
        err("dataset", "no cache entries match the requested subjects")
        return
    rep = evaluate(model, CacheSource(cache, keys, model.input_shape))
    print(format_table([(Path(args.checkpoint).stem, rep)]))
    if args.out:
        Path(args.out).write_text(rep.to_line() + "\n")


def bench_tier(cache_path, tier: str, passes: int, seed: int = 0) -> dict:
    """Images/second for sequential and shuffled reads of every entry."""
    cache = open_cache(cache_path, tier)
    keys = sorted(cache.keys())
    out = {}
    rng = np.random.default_rng(seed)
    for pattern in ("sequential", "shuffled"):
        n = 0
        t0 = time.perf_counter()
        for _ in range(passes):
            order = keys if pattern == "sequential" else [keys[i] for i in rng.permutation(len(keys))]
            for k in order:
                cache.get(k)
                n += 1
        dt = time.perf_counter() - t0
        out[pattern] = n / dt if dt > 0 else float("inf")
    cache.close()
    return out


def cmd_bench_io(args, err) -> None:
    if args.passes < 1:
        raise _UsageError("--passes must be >= 1")
    cache_path = _cache_path(args)
    tiers = ["disk", "memory"] if args.tier == "both" else [args.tier]
    results = {}
    for tier in tiers:
        results[tier] = bench_tier(cache_path, tier, args.passes, args.seed or 0)
        for pattern, rate in results[tier].items():
            print(f"{tier:<6} {pattern:<10} {rate:12.1f} images/s")
    if args.out:
        Path(args.out).write_text(json.dumps(results, sort_keys=True) + "\n")


def cmd_spectrogram(args, err) -> None:
    cfg = RunConfig.resolve(args.config, _overrides(args, {"seed": "seed"}))
    samples, fs = read_channel(args.psg_file, args.channel)
    n = int(round(30 * fs))
    n_epochs = samples.size // n
    if not 0 <= args.epoch_index < n_epochs:
        err("dataset", f"epoch index {args.epoch_index} outside recording ({n_epochs} epochs)")
        return
    seg = samples[args.epoch_index * n : (args.epoch_index + 1) * n]
    img = epoch_to_image(seg, cfg.spectro(), cfg.render())
    save_png(img, args.out_png)
    print(f"wrote {args.out_png} ({img.width}x{img.height})")


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eegmobile", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"eegmobile {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file or run manifest")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("fixtures", help="write a synthetic Sleep-EDF-style corpus")
    sp.add_argument("out")
    sp.add_argument("--subjects", type=int, default=2)
    sp.add_argument("--nights", type=int, nargs="+", default=[1])
    sp.add_argument("--epochs-per-night", type=int, default=10)
    sp.add_argument("--excluded", type=int, default=0, help="unscored epochs per night")
    common(sp)
    sp.set_defaults(func=cmd_fixtures)

    sp = sub.add_parser("ingest", help="render every epoch to the spectrogram cache")
    sp.add_argument("data_dir")
    sp.add_argument("--cache", help=f"cache file (default ${CACHE_ENV} or DATA_DIR/spectrograms.egmc)")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--channel")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="subject-wise k-fold training and evaluation")
    sp.add_argument("--cache")
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tier", choices=["disk", "memory"], default="memory")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--input-size", type=int)
    sp.add_argument("--strict", action="store_true", help="single-threaded deterministic kernels")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on cached epochs")
    sp.add_argument("checkpoint")
    sp.add_argument("--cache")
    sp.add_argument("--subjects", nargs="*")
    sp.add_argument("--tier", choices=["disk", "memory"], default="disk")
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench-io", help="cache read throughput per tier")
    sp.add_argument("--cache")
    sp.add_argument("--tier", choices=["disk", "memory", "both"], default="both")
    sp.add_argument("--passes", type=int, default=3)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_bench_io)

    sp = sub.add_parser("spectrogram", help="render one epoch to PNG")
    sp.add_argument("psg_file")
    sp.add_argument("out_png")
    sp.add_argument("--channel", default="EEG Fpz-Cz")
    sp.add_argument("--epoch-index", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_spectrogram)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    err = _Errors()
    try:
        args.func(args, err)
    except _UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:
        err(_categorize(exc), str(exc))
    return 1 if err.count else 0


if __name__ == "__main__":
    sys.exit(main())
