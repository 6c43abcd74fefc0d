"""Command-line entry point wiring the pipeline into batch workflows.

Subcommands: tile, encode, train-connector, synthesize, stats, evaluate,
merge. Exit codes: 0 success, 1 usage error, 2 validation error, 3
runtime/network error. Every run prints the effective configuration and the
controlling seed. Output files are written to a temporary path in the target
directory and renamed into place on success, so no partial files are left
behind; output directories are staged the same way and must not already
exist.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import connector, encoder, pyramid, synth, tensorio, vqa
from .errors import HttpError, PyramedError

USAGE_ERROR = 1
VALIDATION_ERROR = 2
RUNTIME_ERROR = 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


class _StagedDir:
    """Build a directory in a temp sibling, rename to the target on success."""

    def __init__(self, dest: Path):
        self.dest = dest
        if dest.exists():
            raise ValueError(f"output directory {dest} already exists")
        dest.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=dest.parent, prefix=f".{dest.name}."))

    def __enter__(self) -> Path:
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            os.replace(self.tmp, self.dest)
        else:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _print_run_header(cfg: dict, sections: list[str], seed) -> None:
    shown = {k: cfg[k] for k in sections if k in cfg}
    print(f"effective config: {json.dumps(shown, sort_keys=True)}")
    print(f"seed: {seed if seed is not None else 'none'}")


def _load_square_image(path: str) -> np.ndarray:
    pixels = tensorio.load_image_rgb8(path)
    return pyramid.pad_to_square(tensorio.image_to_float(pixels))


# --- subcommands ------------------------------------------------------------


def _cmd_tile(args, cfg) -> int:
    scale_set = cfgmod.scale_set_from(cfg)
    _print_run_header(cfg, ["scale_set"], None)
    side = args.side if args.side is not None else scale_set.scales[-1]
    if side % scale_set.base != 0:
        raise ValueError(f"--side {side} is not a multiple of base {scale_set.base}")

    img = _load_square_image(args.image)
    scaled = pyramid.resize_bilinear(img, side, side)
    grid = pyramid.split_tiles(scaled, scale_set.base)

    dest = Path(args.out_dir)
    with _StagedDir(dest) as staging:
        files = []
        for i in range(grid.rows):
            for j in range(grid.cols):
                name = f"tile_r{i}c{j}.mstf"
                (staging / name).write_bytes(
                    tensorio.encode_mstf(grid.tiles[i * grid.cols + j])
                )
                files.append(name)
        manifest = {
            "source": str(args.image),
            "side": side,
            "base": scale_set.base,
            "rows": grid.rows,
            "cols": grid.cols,
            "tile_side": grid.tile_side,
            "files": files,
        }
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
        )
    print(f"wrote {len(files)} tiles ({grid.rows}x{grid.cols}, side {grid.tile_side}) to {dest}")
    return 0


def _cmd_encode(args, cfg) -> int:
    scale_set = cfgmod.scale_set_from(cfg)
    spec = cfgmod.encoder_spec_from(cfg)
    _print_run_header(cfg, ["scale_set", "encoder"], spec.seed)

    img = _load_square_image(args.image)
    features = encoder.encode_multiscale(img, scale_set, spec)
    _atomic_write_bytes(Path(args.out), tensorio.encode_mstf(features.values))
    g, _, dim_total = features.values.shape
    print(f"wrote features {g}x{g}x{dim_total} to {args.out}")
    return 0


def _cmd_train_connector(args, cfg) -> int:
    train_cfg = cfgmod.train_config_from(cfg)
    _print_run_header(cfg, ["train"], train_cfg.seed)

    x = tensorio.load_mstf(args.features)
    y = tensorio.load_mstf(args.targets)
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError(f"features/targets must be 2-D, got {x.shape} and {y.shape}")

    if args.init_checkpoint:
        params, _ = connector.load_checkpoint(args.init_checkpoint)
    else:
        hidden = int(cfg["train"].get("hidden", 64))
        params = connector.init_mlp_params(x.shape[1], hidden, y.shape[1], train_cfg.seed)

    mask = connector.FreezeMask(connector_frozen=bool(args.freeze_connector))
    result = connector.train_stage(x, y, train_cfg, mask, params)

    dest = Path(args.out_dir)
    with _StagedDir(dest) as staging:
        connector.save_checkpoint(
            staging,
            result.params,
            seed=train_cfg.seed,
            stage=train_cfg.stage,
            step=len(result.trace),
        )
        connector.write_loss_trace(staging / "loss.csv", result.trace)
        from .figures import save_loss_curve

        save_loss_curve(result.trace, staging / "loss_curve.png")
    final = result.trace[-1].loss if result.trace else float("nan")
    print(f"trained {len(result.trace)} steps, final batch loss {final:.6f}")
    print(f"checkpoint, loss.csv and loss_curve.png in {dest}")
    return 0


def _cmd_synthesize(args, cfg) -> int:
    plan = cfgmod.mix_from(cfg)
    provider_a = cfgmod.provider_from(cfg, "A")
    provider_b = cfgmod.provider_from(cfg, "B")
    _print_run_header(cfg, ["mix", "providers"], plan.seed)

    samples = synth.read_caption_samples(args.infile)
    fewshots = synth.read_fewshots(args.fewshots) if args.fewshots else ()
    transport = synth.make_mock_transport() if args.mock else None
    records, counts = synth.synthesize(
        samples, plan, provider_a, provider_b, fewshots=fewshots, transport=transport
    )
    _atomic_write_text(
        Path(args.out), json.dumps(records, ensure_ascii=False, indent=2) + "\n"
    )
    print(f"provider counts: A={counts['A']} B={counts['B']}")
    print(f"wrote {len(records)} instruct records to {args.out}")
    return 0


def _rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    lines += [",".join(str(r[c]) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def _cmd_stats(args, cfg) -> int:
    _print_run_header(cfg, [], None)
    if args.instruct:
        rows = vqa.instruct_stats(synth.read_instruct_json(args.instruct))
    else:
        rows = vqa.dataset_stats(vqa.read_vqa_jsonl(args.dataset))
    print(vqa.render_counts_table(rows), end="")
    if args.csv:
        _atomic_write_text(Path(args.csv), _rows_to_csv(rows))
        print(f"wrote {args.csv}")
    return 0


def _cmd_evaluate(args, cfg) -> int:
    _print_run_header(cfg, [], None)
    items = vqa.read_vqa_jsonl(args.dataset)
    if args.split != "all":
        items = [it for it in items if it.split == args.split]
    if not items:
        raise ValueError(f"no items in split {args.split!r}")
    preds = vqa.read_predictions(args.predictions)
    report = vqa.evaluate(preds, items)
    text = vqa.render_report(report)
    print(text, end="")

    dest = Path(args.out_dir)
    with _StagedDir(dest) as staging:
        (staging / "report.txt").write_text(text, encoding="utf-8")
        (staging / "report.json").write_text(
            json.dumps(vqa.report_to_json(report), indent=2) + "\n", encoding="utf-8"
        )
        from .figures import save_report_chart

        save_report_chart(report, staging / "report.png")
    print(f"report.txt, report.json and report.png in {dest}")
    return 0


def _cmd_merge(args, cfg) -> int:
    _print_run_header(cfg, [], None)
    merged, counts = synth.merge_records(
        synth.read_instruct_json(args.a), synth.read_instruct_json(args.b)
    )
    _atomic_write_text(
        Path(args.out), json.dumps(merged, ensure_ascii=False, indent=2) + "\n"
    )
    print(f"merged {counts['a']} + {counts['b']} = {counts['total']} records into {args.out}")
    return 0


# --- argument wiring -----------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="pyramed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags win over its values")

    p = sub.add_parser("tile", help="split an image into base-resolution tiles")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--side", type=int, help="target side before tiling (default: largest scale)")
    p.add_argument("--base", type=int, help="tile side override")
    p.set_defaults(func=_cmd_tile)

    p = sub.add_parser("encode", help="encode an image to multi-scale features (.mstf)")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoder-kind", choices=["patch_mean", "seeded_linear"])
    p.add_argument("--patch", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--encoder-seed", type=int)
    p.add_argument("--base", type=int)
    p.add_argument("--scales", help="comma-separated sides, e.g. 378,756,1134")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("train-connector", help="train the MLP connector on feature/target pairs")
    common(p)
    p.add_argument("--features", required=True, help=".mstf matrix, one row per sample")
    p.add_argument("--targets", required=True, help=".mstf matrix of target embeddings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stage", choices=sorted(cfgmod.STAGE_ALIASES))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-ratio", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--train-seed", type=int)
    p.add_argument("--init-checkpoint", help="resume from an existing checkpoint directory")
    p.add_argument("--freeze-connector", action="store_true")
    p.set_defaults(func=_cmd_train_connector)

    p = sub.add_parser("synthesize", help="generate instruct records from caption samples")
    common(p)
    p.add_argument("--in", dest="infile", required=True, help="caption JSONL")
    p.add_argument("--out", required=True, help="instruct JSON output")
    p.add_argument("--mock", action="store_true", help="use the canned offline transport")
    p.add_argument("--ratio-a", type=float)
    p.add_argument("--seed", type=int, help="mix seed")
    p.add_argument("--fewshots", help="JSON array of {input, output} pairs")
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("stats", help="count images/QAs in instruct JSON or VqaItem JSONL")
    common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--instruct", help="instruct JSON file")
    group.add_argument("--dataset", help="VqaItem JSONL file")
    p.add_argument("--csv", help="also write the counts as CSV")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("evaluate", help="score predictions against a dataset")
    common(p)
    p.add_argument("--predictions", required=True, help="JSONL of {qid, text}")
    p.add_argument("--dataset", required=True, help="VqaItem JSONL")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("merge", help="concatenate two instruct files, rejecting duplicate ids")
    common(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_merge)

    return parser


def _overrides_from(args) -> dict:
    scales = None
    if getattr(args, "scales", None):
        scales = [int(s) for s in str(args.scales).split(",") if s.strip()]
    return {
        "scale_set": {"base": getattr(args, "base", None), "scales": scales},
        "encoder": {
            "kind": getattr(args, "encoder_kind", None),
            "patch": getattr(args, "patch", None),
            "dim": getattr(args, "dim", None),
            "seed": getattr(args, "encoder_seed", None),
        },
        "train": {
            "stage": getattr(args, "stage", None),
            "learning_rate": getattr(args, "lr", None),
            "global_batch": getattr(args, "batch", None),
            "epochs": getattr(args, "epochs", None),
            "warmup_ratio": getattr(args, "warmup_ratio", None),
            "weight_decay": getattr(args, "weight_decay", None),
            "hidden": getattr(args, "hidden", None),
            "seed": getattr(args, "train_seed", None),
        },
        "mix": {
            "ratio_a": getattr(args, "ratio_a", None),
            "seed": getattr(args, "seed", None),
        },
    }


def _effective_config(args) -> dict:
    cfg = cfgmod.load_config(getattr(args, "config", None))
    overrides = _overrides_from(args)
    # a --stage flag implies that stage's default rates unless explicitly overridden
    stage_flag = getattr(args, "stage", None)
    if stage_flag:
        stage = cfgmod.STAGE_ALIASES[stage_flag]
        for key, value in cfgmod.STAGE_RATES[stage].items():
            cfg["train"][key] = value
    return cfgmod.apply_overrides(cfg, overrides)


def dispatch(argv: list[str]) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(build_parser().format_usage(), file=sys.stderr, end="")
        return USAGE_ERROR

    try:
        cfg = _effective_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except HttpError as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except (PyramedError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
