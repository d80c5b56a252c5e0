"""Command-line entry point: synth, train, generate, eval, stats.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or validation
error, 3 incomplete results from an external service.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConfigurationError, LayoutGenError, NumericError, ValidationError
from .layout import GuidanceSpec, LayerKind, discretize, dumps_manifest, layout_stats, load_manifest

log = logging.getLogger("layoutgen")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_INCOMPLETE = 0, 1, 2, 3


class Incomplete(Exception):
    """Raised after outputs are written when an external service left gaps."""


# ------------------------------------------------------------------ output staging

@contextmanager
def staged_dir(final: Path):
    """Yield a temp dir next to ``final``; rename it into place only on success."""
    final = Path(final)
    if final.exists():
        raise ValidationError(f"output {final} already exists")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.replace(tmp, final)


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what} {p} does not exist or is not a directory")
    return p


def require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} {p} does not exist")
    return p


def parse_canvas(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"canvas must look like 640x320, got {text!r}") from None
    return w, h


# ------------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    from .data_engine import assets, compose, synth
    from .numeric import Rng

    modes = [m for m in ("synthetic", "build_db", "augment") if getattr(args, m)]
    if len(modes) != 1:
        raise ValidationError("choose exactly one of --synthetic, --build-db, --augment")
    rng = Rng(args.seed)
    out = Path(args.out)
    if args.synthetic:
        spec = synth.SynthSpec(args.count, args.min_layers, args.max_layers, args.canvas)
        spec.validate()
        samples = synth.synth_dataset(spec, rng)
        with staged_dir(out) as tmp:
            synth.write_dataset(samples, tmp)
            if args.with_layers:
                for k, s in enumerate(samples):
                    compose.save_template(compose.template_from_sample(s, f"{k:04d}"), tmp / f"{k:04d}" / "layers")
        log.info("wrote %d synthetic items to %s", len(samples), out)
        return EXIT_OK
    if args.build_db:
        candidates = assets.demo_assets(rng.fork("assets"), args.objects, args.backgrounds)
        db, report = assets.LayerDatabase(), []
        for a in candidates:
            verdict = assets.transparency_filter(a.rgba)
            keep = verdict.accept or assets.is_solid(a.rgba)  # solid swatches feed background swaps
            report.append({"id": a.id, "accept": verdict.accept, "reason": verdict.reason, "kept": keep})
            if keep:
                db.add(a)
        with staged_dir(out) as tmp:
            db.save(tmp)
            (tmp / "filter_report.json").write_text(dump_json(report), encoding="utf-8")
        log.info("database with %d assets at %s", len(db), out)
        return EXIT_OK
    # augment
    if not args.template or not args.db:
        raise ValidationError("--augment needs --template and --db")
    db = assets.LayerDatabase.load(require_dir(args.db, "database"))
    template = compose.load_template(require_dir(args.template, "template"))
    variants = compose.augment(template, db, rng, args.k, args.ar_tol, not args.keep_background)
    plans = []
    with staged_dir(out) as tmp:
        for k, v in enumerate(variants):
            d = tmp / f"{k:04d}"
            d.mkdir()
            synth.write_png(d / "image.png", compose.composite(v.template))
            (d / "manifest.json").write_text(dumps_manifest(compose.variants_layout(v, db)), encoding="utf-8")
            plans.append({"item": d.name, "name": v.name, "replacements": [list(r) for r in v.plan.replacements],
                          "background": v.plan.background})
        (tmp / "plans.json").write_text(dump_json(plans), encoding="utf-8")
        layouts = [load_manifest(tmp / p["item"] / "manifest.json") for p in plans]
        stats = layout_stats(layouts).to_dict() if layouts else {"count": 0}
        (tmp / "stats.json").write_text(dump_json(stats), encoding="utf-8")
    log.info("wrote %d variants to %s", len(variants), out)
    return EXIT_OK


# ------------------------------------------------------------------ train

def load_training_set(root: Path, enc_cfg):
    from .data_engine.synth import read_dataset
    from .diffusion import TrainExample, encode
    from .region_attention import encode_layout_tokens

    samples = read_dataset(require_dir(root, "dataset"))
    if not samples:
        raise ValidationError(f"dataset {root} has no items")
    canvases = {(s.layout.canvas_width, s.layout.canvas_height) for s in samples}
    if len(canvases) != 1:
        raise ValidationError(f"dataset mixes canvas sizes {sorted(canvases)}")
    return [TrainExample(encode(s.image), s.layout, tuple(encode_layout_tokens(s.layout, enc_cfg))) for s in samples]


def cmd_train(args) -> int:
    from .diffusion import DenoiserConfig, TrainConfig, dumps_checkpoint, loads_checkpoint, trace_csv, train
    from .encoders import EncoderConfig

    out = Path(args.out)
    resume = None
    if args.resume:
        resume, dcfg, tcfg, enc_cfg = loads_checkpoint(require_file(args.resume, "checkpoint").read_text("utf-8"))
        if args.epochs is not None:
            tcfg = replace(tcfg, epochs=args.epochs)
    else:
        enc_cfg = EncoderConfig(d_text=args.d_text, seed=args.seed)
        tcfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs if args.epochs is not None else 5,
                           weight_decay=args.weight_decay, grad_clip=args.grad_clip, dropout=args.dropout,
                           beta_glyph=args.beta_glyph, seed=args.seed, lr_decay=args.lr_decay)
        dcfg = None
    data = load_training_set(Path(args.data), enc_cfg)
    H, W = data[0].latent.shape[:2]
    if dcfg is None:
        dcfg = DenoiserConfig(H=H, W=W, blocks=args.blocks, d_model=args.d_model, d_head=args.d_model,
                              d_text=args.d_text, n_heads=args.heads, t_dim=args.d_model)
    elif (dcfg.H, dcfg.W) != (H, W):
        raise ValidationError(f"checkpoint grid {dcfg.H}x{dcfg.W} does not match dataset grid {H}x{W}")
    every = max(1, args.log_every)
    result = train(data, tcfg, dcfg, enc_cfg, resume, args.max_steps,
                   on_step=lambda r: r.step % every == 0 and log.info("step %d loss %.5f", r.step, r.loss))
    with staged_dir(out) as tmp:
        (tmp / "checkpoint.json").write_text(dumps_checkpoint(result, dcfg, tcfg, enc_cfg), encoding="utf-8")
        (tmp / "loss.csv").write_text(trace_csv(result.trace), encoding="utf-8")
    log.info("trained %d steps; checkpoint in %s", result.step, out)
    return EXIT_OK


# ------------------------------------------------------------------ generate

def parse_gamma(items, n_layers: int) -> dict[int, float]:
    out = {}
    for item in items or ():
        try:
            k, v = item.split("=", 1)
            idx, val = int(k), float(v)
        except ValueError:
            raise ConfigurationError(f"--gamma expects INDEX=VALUE, got {item!r}") from None
        if not 0 <= idx < n_layers:
            raise ConfigurationError(f"--gamma index {idx} out of range for {n_layers} layers")
        out[idx] = val
    return out


def parse_sweep(text: str | None):
    """``alpha=0.1,0.5`` or ``global-scale=3,7`` or ``gamma:2=0,1.5,7``."""
    if not text:
        return None
    try:
        key, values = text.split("=", 1)
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--sweep expects KEY=V1,V2,..., got {text!r}") from None
    if not vals:
        raise ConfigurationError("--sweep needs at least one value")
    if key not in ("alpha", "global-scale") and not key.startswith("gamma:"):
        raise ConfigurationError(f"unknown sweep key {key!r}")
    return key, vals


def _fmt(v: float) -> str:
    return repr(float(v))


def render_outputs(d: Path, latent, layout, meta: dict):
    from .data_engine.synth import write_png
    from .diffusion import decode, to_uint8
    from .evaluation.pipeline import occlusion_crop

    image = to_uint8(decode(latent))
    d.mkdir(parents=True)
    write_png(d / "image.png", image)
    (d / "manifest.json").write_text(dumps_manifest(layout), encoding="utf-8")
    (d / "meta.json").write_text(dump_json(meta), encoding="utf-8")
    layers = d / "layers"
    layers.mkdir()
    for layer in layout.layers:
        if layer.kind is LayerKind.TEXT:
            r = discretize(layer.bbox, image.shape[0], image.shape[1])
            crop = image[r.slices()]
        else:
            crop = occlusion_crop(image, layout, layer.index)
        write_png(layers / f"layer_{layer.index:03d}.png", crop)


def cmd_generate(args) -> int:
    from .diffusion import NoiseSchedule, SampleConfig, loads_checkpoint, sample
    from .region_attention import encode_layout_tokens

    result, dcfg, tcfg, enc_cfg = loads_checkpoint(require_file(args.checkpoint, "checkpoint").read_text("utf-8"))
    manifests = [require_file(m, "manifest") for m in args.manifest]
    layouts = [load_manifest(m) for m in manifests]
    for m, lay in zip(manifests, layouts):
        if lay.latent_grid() != (dcfg.H, dcfg.W):
            raise ValidationError(f"{m}: latent grid {lay.latent_grid()} != model grid {(dcfg.H, dcfg.W)}")
        parse_gamma(args.gamma, len(lay.layers))
    sweep = parse_sweep(args.sweep)
    schedule = NoiseSchedule.linear(tcfg.T)

    def settings():
        base = {"alpha": args.alpha, "global-scale": args.global_scale}
        if sweep is None:
            yield None, base, {}
            return
        key, vals = sweep
        for v in vals:
            s, extra = dict(base), {}
            if key.startswith("gamma:"):
                extra = {key[len("gamma:"):]: v}
            else:
                s[key] = v
            yield f"{key.replace(':', '')}={_fmt(v)}", s, extra

    with staged_dir(Path(args.out)) as tmp:
        for k, (m, lay) in enumerate(zip(manifests, layouts)):
            tokens = encode_layout_tokens(lay, enc_cfg)
            for tag, s, extra in settings():
                gam = parse_gamma(list(args.gamma or ()) + [f"{i}={v}" for i, v in extra.items()], len(lay.layers))
                spec = None
                if gam or sweep is not None:
                    spec = GuidanceSpec.from_overrides(len(lay.layers), gam, s["alpha"], s["global-scale"])
                cfg = SampleConfig(steps=args.steps, seed=args.seed, guidance=spec, global_scale=s["global-scale"])
                latent = sample(lay, tokens, result.params, schedule, cfg, dcfg, enc_cfg=enc_cfg)
                meta = {"manifest": m.name, "seed": args.seed, "steps": args.steps, "alpha": s["alpha"],
                        "global_scale": s["global-scale"], "gammas": {str(i): v for i, v in sorted(gam.items())},
                        "layout_conditional": spec is not None}
                d = tmp / f"{k:04d}" if tag is None else tmp / f"{k:04d}" / tag
                render_outputs(d, latent, lay, meta)
                log.info("generated %s", d.relative_to(tmp))
    return EXIT_OK


# ------------------------------------------------------------------ eval

def discover_items(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.rglob("manifest.json")
                  if (p.parent / "image.png").is_file() and p.parent.name != "layers")


def cmd_eval(args) -> int:
    from .data_engine.synth import decode_text_band, read_png
    from .evaluation.judge import RemoteJudge, StubJudge
    from .evaluation.metrics import ItemMetrics, aggregate
    from .evaluation.pipeline import EvalItem, item_spelling, lgsr

    root = require_dir(args.outputs, "outputs directory")
    dirs = discover_items(root)
    if not dirs:
        raise ValidationError(f"no (image.png, manifest.json) items under {root}")
    judge = StubJudge() if args.judge == "stub" else RemoteJudge.from_env(args.timeout)
    records, details = [], []
    for d in dirs:
        layout = load_manifest(d / "manifest.json")
        image = read_png(d / "image.png")
        refs = {l.index: l.text_content for l in layout.text_layers}
        if args.hypothesis == "reference":
            hyps = dict(refs)
        else:
            H, W = image.shape[:2]
            hyps = {l.index: decode_text_band(image, discretize(l.bbox, H, W)) for l in layout.text_layers}
        item = EvalItem(image, layout, refs, hyps, str(d.relative_to(root)))
        report = lgsr(item, judge, args.threshold, args.attempts, args.parallelism)
        records.append(ItemMetrics(item.name, len(layout.layers), item_spelling(item), report.lgsr, report.complete))
        details.append({"item": item.name, "lgsr": report.to_dict(), "hypotheses": {str(k): v for k, v in hyps.items()}})
    summary = aggregate(records, args.scheme)
    summary["judge"] = args.judge
    summary["threshold"] = args.threshold
    out = Path(args.out)
    with staged_dir(out) as tmp:
        (tmp / "report.json").write_text(dump_json(summary), encoding="utf-8")
        (tmp / "layers.json").write_text(dump_json(details), encoding="utf-8")
    if args.human:
        print(format_report(summary))
    if not summary["complete"]:
        raise Incomplete("judge left some layers unscored; report flagged incomplete")
    return EXIT_OK


def format_report(summary: dict) -> str:
    def f(v):
        return "-" if v is None else f"{v:.3f}"
    lines = [f"{'bucket':>8}  {'n':>4}  {'spelling':>8}  {'lgsr':>6}"]
    for label, b in summary["buckets"].items():
        lines.append(f"{label:>8}  {b['count']:>4}  {f(b['spelling_precision']):>8}  {f(b['lgsr']):>6}")
    o = summary["overall"]
    lines.append(f"{'all':>8}  {o['count']:>4}  {f(o['spelling_precision']):>8}  {f(o['lgsr']):>6}")
    return "\n".join(lines)


# ------------------------------------------------------------------ stats

def cmd_stats(args) -> int:
    root = require_dir(args.data, "dataset")
    manifests = sorted(root.glob("*/manifest.json"))
    if not manifests:
        raise ValidationError(f"dataset {root} has no manifests")
    text = dump_json(layout_stats([load_manifest(m) for m in manifests]).to_dict())
    if args.out:
        write_text_atomic(Path(args.out), text)
    if args.human or not args.out:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random stream (default 0)")
    common.add_argument("--human", action="store_true", help="also print a human-readable summary")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="layoutgen", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"layoutgen {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="build datasets, asset databases and augmented variants")
    s.add_argument("--out", required=True)
    s.add_argument("--synthetic", action="store_true", help="generate color-semantics layouts")
    s.add_argument("--count", type=int, default=64)
    s.add_argument("--min-layers", type=int, default=2)
    s.add_argument("--max-layers", type=int, default=8)
    s.add_argument("--canvas", type=parse_canvas, default=(640, 320))
    s.add_argument("--with-layers", action="store_true", help="also write per-layer template bitmaps")
    s.add_argument("--build-db", action="store_true", help="write a procedural transparent-layer database")
    s.add_argument("--objects", type=int, default=24)
    s.add_argument("--backgrounds", type=int, default=6)
    s.add_argument("--augment", action="store_true", help="retrieval-based layer replacement of a template")
    s.add_argument("--template")
    s.add_argument("--db")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--ar-tol", type=float, default=1.5)
    s.add_argument("--keep-background", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="train the toy denoiser")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-decay", choices=("none", "cosine"), default="none")
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--grad-clip", type=float, default=1.0)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--beta-glyph", type=float, default=1.0)
    t.add_argument("--blocks", type=int, default=3)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--d-model", type=int, default=32)
    t.add_argument("--d-text", type=int, default=32)
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", parents=[common], help="sample images for layout manifests")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--manifest", required=True, action="append")
    g.add_argument("--out", required=True)
    g.add_argument("--steps", type=int, default=50)
    g.add_argument("--gamma", action="append", metavar="INDEX=VALUE", help="per-layer guidance scale")
    g.add_argument("--alpha", type=float, default=0.5)
    g.add_argument("--global-scale", type=float, default=7.0)
    g.add_argument("--sweep", metavar="KEY=V1,V2", help="alpha=..., global-scale=... or gamma:INDEX=...")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", parents=[common], help="spelling precision and LGSR reports")
    e.add_argument("--outputs", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--judge", choices=("stub", "remote"), default="stub")
    e.add_argument("--threshold", type=int, default=5)
    e.add_argument("--scheme", choices=("infographics", "slides"), default="infographics")
    e.add_argument("--hypothesis", choices=("decode", "reference"), default="decode",
                   help="read text back from the band pattern, or inject the reference text")
    e.add_argument("--attempts", type=int, default=3)
    e.add_argument("--parallelism", type=int, default=4)
    e.add_argument("--timeout", type=float, default=30.0)
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", parents=[common], help="layer-count statistics of a dataset")
    st.add_argument("--data", required=True)
    st.add_argument("--out")
    st.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except Incomplete as exc:
        print(f"layoutgen: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except NumericError as exc:
        print(f"layoutgen: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LayoutGenError, KeyError) as exc:
        print(f"layoutgen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"layoutgen: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
