"""Command-line entry points: split, train, eval, predict, serve, synth.

Every flag has a config-file equivalent: each subcommand accepts --config
pointing at a JSON object with the same keys; explicit flags win on
conflict. XDX_LOG=debug|info|warn controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import synth
from .config import RunConfig, ServiceConfig, STAGE_HEAD_KINDS, default_classes, parse_spec
from .data import load_manifest, save_manifest, split_dataset
from .labels import XRAY_TYPES
from .model import Head

log = logging.getLogger("xdx")


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING}.get(
        os.environ.get("XDX_LOG", "warn").lower(), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_config_file(path) -> dict:
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise ValueError("config file must hold a JSON object")
    return obj


def _merged(args, keys) -> dict:
    """Config-file values overridden by explicitly provided CLI flags."""
    merged = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            merged[key] = value
    return merged


def _parse_ratios(text: str) -> tuple:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated ratios, got {text!r}")
    return tuple(parts)


def _parse_floats3(text: str) -> tuple:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated accuracies, got {text!r}")
    return tuple(parts)


# -- subcommands ---------------------------------------------------------------------


def cmd_split(args) -> int:
    merged = _merged(args, ["manifest", "seed", "ratios", "out"])
    if "manifest" not in merged:
        raise ValueError("split needs --manifest")
    ratios = merged.get("ratios", (0.7, 0.2, 0.1))
    if isinstance(ratios, str):
        ratios = _parse_ratios(ratios)
    manifest = load_manifest(merged["manifest"])
    out = split_dataset(manifest, int(merged.get("seed", 0)), tuple(ratios))
    target = merged.get("out", merged["manifest"])  # default: rewrite in place
    save_manifest(out, target)
    sizes = {s: len(out.by_split(s)) for s in ("train", "val", "test")}
    print(json.dumps({"written": str(target), "sizes": sizes}))
    return 0


def cmd_train(args) -> int:
    overrides = {
        key: getattr(args, key.replace("-", "_"))
        for key in ["stage", "manifest", "seed", "epochs", "lr", "optimizer",
                    "batch_size", "weight_decay", "out_weights", "metrics_log"]
        if getattr(args, key.replace("-", "_"), None) is not None
    }
    config = RunConfig.load(args.config, overrides) if args.config else RunConfig.from_dict(overrides)
    from .train import train

    history = train(config)
    print(json.dumps({"weights": config.out_weights, "epochs": len(history),
                      "final_val_loss": history[-1]["val_loss"]}))
    return 0


def cmd_eval(args) -> int:
    merged = _merged(args, ["weights", "manifest", "stage", "out", "preset",
                            "input_size", "classes", "stage_accuracies", "threshold"])
    for key in ("weights", "manifest", "stage"):
        if key not in merged:
            raise ValueError(f"eval needs --{key}")
    stage = int(merged["stage"])
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2, or 3, got {stage}")
    classes = merged.get("classes", default_classes(stage))
    if isinstance(classes, str):
        classes = tuple(classes.split(","))
    classes = tuple(classes)
    units = 1 if stage == 1 else len(classes)
    head = Head(STAGE_HEAD_KINDS[stage], units)
    spec_obj = merged.get("spec", {"preset": merged.get("preset", "densenet121")})
    if "input_size" in merged:
        spec_obj = dict(spec_obj)
        spec_obj["input_size"] = int(merged["input_size"])
    spec = parse_spec(spec_obj, head)
    accs = merged.get("stage_accuracies")
    if isinstance(accs, str):
        accs = _parse_floats3(accs)
    from .train import evaluate

    payload = evaluate(
        merged["weights"], merged["manifest"], stage, spec, classes,
        out_dir=merged.get("out"), stage_accuracies=accs,
        threshold=float(merged.get("threshold", 0.5)),
    )
    print(json.dumps(payload, indent=2))
    return 0


def cmd_predict(args) -> int:
    if not args.config:
        raise ValueError("predict needs --config (service config with the three models)")
    config = ServiceConfig.load(args.config)
    from . import imaging
    from .service import ServiceContext
    from .cascade import run_cascade

    ctx = ServiceContext(config)
    image = imaging.read_image(args.image)
    report = run_cascade(image, ctx.models, ctx.cascade_config, args.explain)
    payload = report.to_json_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
        if report.explanations:
            for name, hm in report.explanations.items():
                fname = name.lower().replace(" ", "_") + ".pgm"
                (out / fname).write_bytes(hm.to_pgm_bytes())
    return 0


def cmd_serve(args) -> int:
    if not args.config:
        raise ValueError("serve needs --config")
    overrides = {"port": args.port} if args.port is not None else {}
    config = ServiceConfig.load(args.config, overrides)
    from .service import serve

    print(f"serving on port {config.port}", file=sys.stderr)
    serve(config)
    return 0


def cmd_synth(args) -> int:
    kind = args.kind
    if kind == "stage1":
        path = synth.stage1_corpus(args.out, args.per_class, args.size, args.seed)
    elif kind == "stage2":
        classes = tuple(args.classes.split(",")) if args.classes else tuple(XRAY_TYPES[:3])
        path = synth.stage2_corpus(args.out, classes, args.per_class, args.size, args.seed)
    elif kind == "stage3":
        conditions = tuple(args.classes.split(",")) if args.classes else None
        path = synth.stage3_corpus(args.out, conditions, args.per_class, args.size, args.seed)
    else:
        raise ValueError(f"unknown corpus kind {kind!r}")
    print(json.dumps({"manifest": str(path)}))
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xdx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="assign train/val/test splits to a manifest")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratios", help="comma-separated, e.g. 0.7,0.2,0.1")
    p.add_argument("--out", help="output manifest path (default: rewrite in place)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one cascade stage")
    p.add_argument("--config")
    p.add_argument("--stage", type=int)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "radam"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--out-weights")
    p.add_argument("--metrics-log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate weights on a manifest's test split")
    p.add_argument("--weights")
    p.add_argument("--manifest")
    p.add_argument("--stage", type=int)
    p.add_argument("--out", help="directory for report files and figures")
    p.add_argument("--preset")
    p.add_argument("--input-size", type=int)
    p.add_argument("--classes", help="comma-separated class names")
    p.add_argument("--stage-accuracies", help="three accuracies a1,a2,a3 to compose")
    p.add_argument("--threshold", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="run the cascade on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--explain", help="condition name or 'all'")
    p.add_argument("--out", help="directory for report.json and heatmap PGMs")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--kind", choices=["stage1", "stage2", "stage3"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--classes", help="comma-separated label names")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
