"""Command-line entry point for reproducible batch runs.

Every subcommand reads its settings from flags (optionally defaulted by a
run-config JSON), writes its products under --out-dir, and records a
run-manifest with the config hash, seed, and tool version. Exit codes:
0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, fusion, masks, providers, reference, scoring, votes
from .model import (
    ArtifactRecord,
    BinaryMask,
    Heatmap,
    ValidationError,
    read_heatmap,
    read_image,
    read_manifest,
    read_mask,
    read_srph,
    write_heatmap,
    write_image,
    write_manifest,
    write_mask,
    write_srph,
)
from .providers import BlockGrid, DEFAULT_PROVIDERS, ingest_block_heatmap, load_provider_registry
from .raster import padded_bbox

DEFAULT_CROP_PAD = 128


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors on stderr with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def _load_registry(args) -> dict[str, providers.ProviderSpec]:
    if getattr(args, "registry", None):
        return load_provider_registry(args.registry)
    return dict(DEFAULT_PROVIDERS)


def _provider_spec(args) -> providers.ProviderSpec:
    registry = _load_registry(args)
    name = args.provider
    if name not in registry:
        raise ValidationError(f"unknown provider {name!r}; known: {sorted(registry)}")
    spec = registry[name]
    if getattr(args, "t", None) is not None:
        spec = providers.ProviderSpec(spec.name, spec.polarity, spec.comparator, args.t)
    return spec


def _read_grid(path: str) -> BlockGrid:
    decoded = read_srph(path)
    if decoded.block is None:
        raise ValidationError(f"{path}: expected a block-grid SRPH file (no block metadata)")
    return BlockGrid(
        scores=decoded.values.astype(np.float64),
        block_size=decoded.block.size,
        stride=decoded.block.stride,
        image_width=decoded.block.image_width,
        image_height=decoded.block.image_height,
        polarity=decoded.polarity,
    )


def _compute_heatmap(args) -> Heatmap | BlockGrid:
    name = args.provider
    if name == "bd_jup" and args.lpips:
        return providers.bd_jup(_read_grid(args.lpips), _read_grid(args.erqa_grid))
    if not args.ref or not args.test:
        raise ValidationError(f"provider {name!r} needs --ref and --test images")
    ref = read_image(args.ref)
    test = read_image(args.test)
    if name == "ssim":
        return providers.ssim_map(ref, test)
    if name == "erqa":
        return providers.erqa_map(ref, test)
    if name == "ssm_jup":
        if not args.bic:
            raise ValidationError("ssm_jup needs --bic (bicubic-upscaled baseline)")
        return providers.ssm_jup(ref, test, read_image(args.bic))
    raise ValidationError(f"cannot compute provider {name!r} natively; ingest its SRPH file")


# ---------------------------------------------------------------------------
# Subcommand handlers: each returns the list of written output paths


def cmd_heatmap(args) -> list[Path]:
    result = _compute_heatmap(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(result, BlockGrid):
        from .model import BlockMeta

        write_srph(
            out,
            result.scores,
            result.polarity,
            block=BlockMeta(
                size=result.block_size,
                stride=result.stride,
                image_width=result.image_width,
                image_height=result.image_height,
            ),
        )
    else:
        write_heatmap(result, out)
    return [out]


def cmd_propose(args) -> list[Path]:
    spec = _provider_spec(args)
    if args.heatmap:
        heatmap = ingest_block_heatmap(args.heatmap, spec)
    else:
        result = _compute_heatmap(args)
        if isinstance(result, BlockGrid):
            heatmap = Heatmap(values=providers.expand_block_grid(result), polarity=spec.polarity)
        else:
            heatmap = result
    mask = masks.threshold_heatmap(heatmap, spec)
    candidates = masks.extract_candidates(mask, heatmap, k=args.k, min_area=args.min_area)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    outputs = []
    for i, cand in enumerate(candidates):
        mask_path = out_dir / f"candidate_{i:02d}.png"
        write_mask(cand.mask, mask_path)
        outputs.append(mask_path)
        rows.append(
            {
                "mask": mask_path.name,
                "mean_score": cand.mean_score,
                "area": cand.area,
                "provider": spec.name,
                "threshold": spec.native_threshold,
            }
        )
    proposals = out_dir / "proposals.json"
    _write_json(proposals, rows)
    outputs.append(proposals)
    return outputs


def cmd_prep_view(args) -> list[Path]:
    mask = read_mask(args.mask)
    prepared = masks.prep_view(mask)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mask(prepared, out)
    return [out]


def cmd_render_pair(args) -> list[Path]:
    lr = read_image(args.lr)
    sr = read_image(args.sr)
    mask = read_mask(args.mask)
    crop = None
    if args.crop_pad is not None:
        crop = padded_bbox(mask, args.crop_pad, bounds=(sr.width, sr.height))
    original, upscaled = masks.render_annotation_pair(lr, sr, mask, crop=crop)
    out_original = Path(args.out_original)
    out_upscaled = Path(args.out_upscaled)
    out_original.parent.mkdir(parents=True, exist_ok=True)
    out_upscaled.parent.mkdir(parents=True, exist_ok=True)
    write_image(original, out_original)
    write_image(upscaled, out_upscaled)
    return [out_original, out_upscaled]


def cmd_aggregate(args) -> list[Path]:
    assignments = votes.read_assignments(args.votes)
    grouped = votes.group_votes(votes.qc_filter(assignments, scope=args.scope))
    rows = []
    for question_id in sorted(grouped):
        qvotes = grouped[question_id]
        rows.append(
            {
                "question": question_id,
                "votes_pos": sum(qvotes),
                "votes_total": len(qvotes),
                "prominence": votes.prominence(qvotes),
            }
        )
    out = Path(args.out)
    _write_json(out, {"scope": args.scope, "questions": rows})
    outputs = [out]
    if args.manifest:
        records = read_manifest(args.manifest)
        by_question = {row["question"]: row for row in rows}
        updated = []
        for record in records:
            row = by_question.get(record.mask_path)
            if row is None:
                updated.append(record)
            else:
                updated.append(
                    ArtifactRecord.from_votes(
                        record.component_id,
                        record.source_image_id,
                        record.sr_method_id,
                        record.metric_id,
                        record.mask_path,
                        row["votes_pos"],
                        row["votes_total"],
                        record.display_dilated,
                    )
                )
        out_manifest = Path(args.out_manifest or args.manifest)
        write_manifest(updated, out_manifest)
        outputs.append(out_manifest)
    return outputs


def cmd_bootstrap(args) -> list[Path]:
    assignments = votes.read_assignments(args.votes)
    grouped = votes.group_votes(votes.qc_filter(assignments, scope=args.scope))
    rows = []
    for i, question_id in enumerate(sorted(grouped)):
        low, high = votes.bootstrap_ci(
            grouped[question_id], k=args.k, n=args.n, level=args.level, seed=[args.seed, i]
        )
        rows.append(
            {
                "question": question_id,
                "low": low,
                "high": high,
                "half_width": (high - low) / 2.0,
            }
        )
    out = Path(args.out)
    _write_json(
        out,
        {"k": args.k, "n": args.n, "level": args.level, "seed": args.seed, "questions": rows},
    )
    return [out]


def cmd_score(args) -> list[Path]:
    spec = _provider_spec(args)
    records = read_manifest(args.manifest)
    if args.component:
        records = [r for r in records if r.component_id == args.component]
    base = Path(args.manifest).parent

    def heatmap_path(record: ArtifactRecord) -> Path:
        return base / args.heatmap_template.format(
            source=record.source_image_id, sr=record.sr_method_id, provider=spec.name
        )

    def load_pair(record: ArtifactRecord):
        mask = read_mask(base / record.mask_path, display_dilated=record.display_dilated)
        heatmap = ingest_block_heatmap(
            heatmap_path(record), spec, image_size=(mask.width, mask.height)
        )
        return heatmap, mask

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        loaded = list(pool.map(load_pair, records))
    pairs = dict(zip((scoring.record_key(r) for r in records), loaded))

    result = scoring.prominence_score(
        records,
        heatmap_for=lambda r: pairs[scoring.record_key(r)][0],
        mask_for=lambda r: pairs[scoring.record_key(r)][1],
    )
    out = Path(args.out)
    payload = {"provider": spec.name, "component": args.component}
    payload.update(result.to_json())
    _write_json(out, payload)
    return [out]


def cmd_tables(args) -> list[Path]:
    records = read_manifest(args.manifest)
    if args.component:
        records = [r for r in records if r.component_id == args.component]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    detector_rows = scoring.detector_table(records)
    sr_rows = scoring.sr_table(records)
    components = sorted({r.component_id for r in records})
    summaries = {
        c: votes.component_summary([r for r in records if r.component_id == c]).to_json()
        for c in components
    }

    outputs = []
    for name, payload, text in (
        ("detector_table", [r.to_json() for r in detector_rows],
         scoring.render_detector_markdown(detector_rows)),
        ("sr_table", [r.to_json() for r in sr_rows], scoring.render_sr_markdown(sr_rows)),
    ):
        _write_json(out_dir / f"{name}.json", payload)
        (out_dir / f"{name}.md").write_text(text)
        outputs += [out_dir / f"{name}.json", out_dir / f"{name}.md"]
    _write_json(out_dir / "summary.json", summaries)
    outputs.append(out_dir / "summary.json")

    if args.srcc_scores:
        srcc = _read_json(args.srcc_scores)
        prom_x_conf = {row.metric_id: row.prom_x_conf for row in detector_rows}
        common = sorted(set(srcc) & set(prom_x_conf))
        agreement = scoring.rank_agreement(
            {k: prom_x_conf[k] for k in common}, {k: float(srcc[k]) for k in common}
        )
        verification = out_dir / "verification.json"
        _write_json(
            verification,
            {"rank_agreement": agreement, "methods": common,
             "dropped": sorted(set(srcc) ^ set(prom_x_conf))},
        )
        outputs.append(verification)
    return outputs


def cmd_calibrate(args) -> list[Path]:
    spec = _provider_spec(args)
    items_rows = _read_json(args.items)
    base = Path(args.items).parent
    items = []
    for row in items_rows:
        heatmap = ingest_block_heatmap(base / row["heatmap"], spec)
        gt = tuple(read_mask(base / p) for p in row["gt_masks"])
        items.append(scoring.CalibrationItem(heatmap=heatmap, gt_masks=gt))
    result = scoring.calibrate_threshold(spec, items)
    out = Path(args.out)
    payload = {"provider": spec.name}
    payload.update(result.to_json())
    _write_json(out, payload)
    return [out]


def _load_example(base: Path, row: dict) -> fusion.TrainingExample:
    specs = DEFAULT_PROVIDERS
    mask = read_mask(base / row["mask"])
    size = (mask.width, mask.height)
    stack = fusion.stack_features(
        dists=ingest_block_heatmap(base / row["dists"], specs["dists"], image_size=size),
        ssm=ingest_block_heatmap(base / row["ssm"], specs["ssm_jup"], image_size=size),
        bd=ingest_block_heatmap(base / row["bd"], specs["bd_jup"], image_size=size),
    )
    return fusion.TrainingExample(stack=stack, mask=mask, prominence=float(row["prominence"]))


def cmd_fuse_train(args) -> list[Path]:
    rows = _read_json(args.examples)
    base = Path(args.examples).parent
    examples = [_load_example(base, row) for row in rows]
    result = fusion.train(examples, epochs=args.epochs, lr=args.lr, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fusion.save_model(result.model, out)
    log_path = Path(args.log or out.with_suffix(".log.json"))
    _write_json(
        log_path,
        {
            "epoch_losses": result.epoch_losses,
            "skipped_examples": result.skipped_examples,
            "seed": args.seed,
            "epochs": args.epochs,
            "lr": args.lr,
        },
    )
    return [out, log_path]


def cmd_fuse_predict(args) -> list[Path]:
    model = fusion.load_model(args.model)
    specs = DEFAULT_PROVIDERS
    dists = ingest_block_heatmap(args.dists, specs["dists"])
    size = (dists.width, dists.height)
    stack = fusion.stack_features(
        dists=dists,
        ssm=ingest_block_heatmap(args.ssm, specs["ssm_jup"], image_size=size),
        bd=ingest_block_heatmap(args.bd, specs["bd_jup"], image_size=size),
    )
    heatmap = fusion.forward(model, stack, clamp=not args.raw)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap(heatmap, out)
    return [out]


def cmd_compare_ref(args) -> list[Path]:
    primary = {str(k): float(v) for k, v in _read_json(args.scores_primary).items()}
    pseudo = {str(k): float(v) for k, v in _read_json(args.scores_pseudo).items()}
    deltas = reference.compare_reference_runs(primary, pseudo)
    out = Path(args.out)
    _write_json(out, [d.to_json() for d in deltas])
    return [out]


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="srprom", description=__doc__)
    parser.add_argument("--version", action="version", version=f"srprom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, handler, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--out-dir", default="out", help="directory for the run manifest")
        p.add_argument("--config", help="run-config JSON supplying flag defaults")
        return p

    p = add("heatmap", cmd_heatmap, "compute a provider heatmap for one image pair")
    p.add_argument("--provider", required=True)
    p.add_argument("--ref")
    p.add_argument("--test")
    p.add_argument("--bic")
    p.add_argument("--lpips", help="block-grid SRPH input for bd_jup")
    p.add_argument("--erqa-grid", help="block-grid SRPH input for bd_jup")
    p.add_argument("--registry")
    p.add_argument("--out", required=True)

    p = add("propose", cmd_propose, "threshold a heatmap and rank candidate masks")
    p.add_argument("--provider", required=True)
    p.add_argument("--ref")
    p.add_argument("--test")
    p.add_argument("--bic")
    p.add_argument("--lpips")
    p.add_argument("--erqa-grid")
    p.add_argument("--heatmap", help="precomputed SRPH instead of --ref/--test")
    p.add_argument("--t", type=float, help="threshold override")
    p.add_argument("--k", type=int, default=masks.DEFAULT_CANDIDATES)
    p.add_argument("--min-area", type=int, default=masks.MIN_CANDIDATE_AREA)
    p.add_argument("--registry")

    p = add("prep-view", cmd_prep_view, "prepare a mask for viewer display")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = add("render-pair", cmd_render_pair, "render the Original/Upscaled viewer pair")
    p.add_argument("--lr", required=True)
    p.add_argument("--sr", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--crop-pad", type=int, nargs="?", const=DEFAULT_CROP_PAD, default=None)
    p.add_argument("--out-original", required=True)
    p.add_argument("--out-upscaled", required=True)

    p = add("aggregate", cmd_aggregate, "aggregate crowd votes into prominence")
    p.add_argument("--votes", required=True)
    p.add_argument("--scope", choices=votes.QC_SCOPES, default="assignment")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="merge aggregated votes into this manifest")
    p.add_argument("--out-manifest")

    p = add("bootstrap", cmd_bootstrap, "bootstrap prominence confidence intervals")
    p.add_argument("--votes", required=True)
    p.add_argument("--scope", choices=votes.QC_SCOPES, default="assignment")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "threshold-free prominence score for one provider")
    p.add_argument("--manifest", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--component")
    p.add_argument("--heatmap-template", required=True,
                   help="path template with {source}/{sr}/{provider} placeholders")
    p.add_argument("--t", type=float)
    p.add_argument("--registry")
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--out", required=True)

    p = add("tables", cmd_tables, "detector/SR benchmark tables from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--component")
    p.add_argument("--srcc-scores", help="JSON provider->SRCC map for rank agreement")

    p = add("calibrate", cmd_calibrate, "calibrate a provider threshold on labeled data")
    p.add_argument("--provider", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--registry")
    p.add_argument("--out", required=True)

    p = add("fuse-train", cmd_fuse_train, "train the MLP fusion baseline")
    p.add_argument("--examples", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=fusion.DEFAULT_LR)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = add("fuse-predict", cmd_fuse_predict, "run the fusion baseline on feature maps")
    p.add_argument("--model", required=True)
    p.add_argument("--dists", required=True)
    p.add_argument("--ssm", required=True)
    p.add_argument("--bd", required=True)
    p.add_argument("--raw", action="store_true", help="skip the [0, 1] output clamp")
    p.add_argument("--out", required=True)

    p = add("compare-ref", cmd_compare_ref, "compare provider scores across references")
    p.add_argument("--scores-primary", required=True)
    p.add_argument("--scores-pseudo", required=True)
    p.add_argument("--out", required=True)

    return parser


def _apply_config(args: argparse.Namespace) -> None:
    """Fill unset (None) options from the run-config JSON."""
    if not getattr(args, "config", None):
        return
    config = _read_json(args.config)
    if not isinstance(config, dict):
        raise ValidationError("run config must be a JSON object")
    for key, value in config.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) is None:
            setattr(args, dest, value)


def _config_hash(args: argparse.Namespace) -> str:
    payload = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("handler",) and v is not None
    }
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        outputs = args.handler(args)
        manifest = {
            "command": args.command,
            "version": __version__,
            "seed": getattr(args, "seed", None),
            "config_sha256": _config_hash(args),
            "outputs": [str(p) for p in outputs],
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    except ValidationError as exc:
        print(f"srprom {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"srprom {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
