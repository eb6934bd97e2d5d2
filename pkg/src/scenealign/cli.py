"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune-vqa, finetune-sqa, eval-vqa,
eval-sqa, embed, project, ablation. Numeric settings come from a JSON config
file (see config.py); flags carry only paths, seeds, and toggles. Every
command that writes artifacts drops a manifest.json with the config
fingerprint, and identical config+seed reruns produce byte-identical outputs.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration/usage.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import torch

from .checkpoint import fingerprint_config, load_checkpoint
from .config import (
    ExperimentConfig,
    config_to_dict,
    encoder_arch_fingerprint,
    load_config,
)
from .errors import ConfigError, SceneAlignError
from .metrics import box_iou, build_report, em_at_1
from .pretrain import (
    export_embeddings,
    project_2d,
    read_embedding_table,
    run_pretraining,
    write_embedding_table,
)
from .pretrain.trainer import render_scene_views
from .scene_data import AxisAlignedBox, generate_split, load_dataset, save_dataset
from .scene_encoder import SceneEncoder
from .sqa import evaluate_sqa, finetune_sqa, load_sqa_bundle
from .vqa import evaluate_vqa, finetune_vqa, load_vqa_bundle

ABLATION_PRESETS = ("full", "single-view", "cosine-loss", "no-text-loss", "no-image-loss")


def _write_manifest(out_dir: Path, command: str, config: ExperimentConfig, extra=None) -> None:
    artifacts = sorted(
        str(p.relative_to(out_dir)) for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json"
    )
    payload = {
        "command": command,
        "config_fingerprint": fingerprint_config(config_to_dict(config)),
        "seed": config.seed,
        "artifacts": artifacts,
    }
    if extra:
        payload.update(extra)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_experiment(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        config = dataclasses.replace(config, jobs=args.jobs)
    torch.set_num_threads(max(1, config.jobs))
    return config


def _cmd_gen_data(args) -> int:
    config = _load_experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": args.scenes, "val": args.val_scenes, "test": args.test_scenes}
    for split, count in counts.items():
        if count <= 0:
            continue
        scenes, qa, sqa = generate_split(config.seed, config.data, count, split)
        save_dataset(out, split, scenes, qa, sqa, config.data.class_names)
    _write_manifest(out, "gen-data", config, {"scene_counts": counts})
    print(f"wrote dataset to {out}")
    return 0


def _cmd_pretrain(args) -> int:
    config = _load_experiment(args)
    split = load_dataset(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_views:
        from .renderer import save_view_png

        dump_dir = Path(args.dump_views)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for scene in split.scenes:
            for k, view in enumerate(render_scene_views(scene.cloud, config.pretrain.num_views, config)):
                save_view_png(view, dump_dir / f"{scene.scene_id}_view{k}.png")
    result = run_pretraining(split, config, out_dir=out)
    _write_manifest(out, "pretrain", config, {"iterations": config.pretrain.iterations})
    final = result.log[-1]
    print(
        f"pretrain done: iterations={final['iteration']} "
        f"loss_pre={final['loss_pre']:.4f} checkpoint={result.checkpoint_path}"
    )
    return 0


def _cmd_finetune(args, task: str) -> int:
    config = _load_experiment(args)
    split = load_dataset(args.data, "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = finetune_vqa if task == "vqa" else finetune_sqa
    result = runner(split, config, pretrained_path=args.pretrained, out_dir=out)
    _write_manifest(out, f"finetune-{task}", config, {"pretrained": bool(args.pretrained)})
    print(f"finetune-{task} done: loss={result.log[-1]['loss']:.4f} checkpoint={result.checkpoint_path}")
    return 0


def _score_vqa_dump(split, dump) -> "tuple":
    by_qid = {r["question_id"]: r for r in dump}
    scenes = {s.scene_id: s for s in split.scenes}
    em_hits, pred_boxes, gt_boxes, candidates, references = [], [], [], [], []
    for record in split.qa:
        pred = by_qid.get(record.question_id)
        if pred is None:
            raise SceneAlignError(f"prediction dump missing question {record.question_id!r}")
        answer = pred["answer_top1"]
        em_hits.append(em_at_1(answer, record.answers))
        candidates.append(answer)
        references.append(list(record.answers))
        sample = scenes[record.scene_id]
        by_instance = {a.instance_id: a for a in sample.annotations}
        referred = [by_instance[i].box for i in record.referred_instance_ids if i in by_instance]
        if referred and pred.get("predicted_box"):
            box = AxisAlignedBox(
                center=pred["predicted_box"]["center"], size=pred["predicted_box"]["size"]
            )
            best = max(referred, key=lambda ref: box_iou(box, ref))
            pred_boxes.append(box)
            gt_boxes.append(best)
        else:
            pred_boxes.append(None)
            gt_boxes.append(None)
    return build_report(em_hits, pred_boxes, gt_boxes, candidates, references), None


def _cmd_eval(args, task: str) -> int:
    config = _load_experiment(args)
    split = load_dataset(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        with open(args.predictions) as f:
            dump = json.load(f)
        if task == "vqa":
            report, _ = _score_vqa_dump(split, dump)
        else:
            by_sid = {r["situation_id"]: r for r in dump}
            em_hits, candidates, references = [], [], []
            for record in split.sqa:
                pred = by_sid.get(record.situation_id)
                if pred is None:
                    raise SceneAlignError(f"prediction dump missing situation {record.situation_id!r}")
                em_hits.append(em_at_1(pred["answer_top1"], record.answers))
                candidates.append(pred["answer_top1"])
                references.append(list(record.answers))
            report = build_report(em_hits, candidates=candidates, references=references)
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        if task == "vqa":
            bundle = load_vqa_bundle(args.checkpoint, config)
            report, dump = evaluate_vqa(split, bundle)
        else:
            bundle = load_sqa_bundle(args.checkpoint, config)
            report, dump = evaluate_sqa(split, bundle)
        with open(out / f"predictions_{task}_{args.split}.json", "w") as f:
            json.dump(dump, f, indent=2, sort_keys=True)
            f.write("\n")
    with open(out / f"report_{task}_{args.split}.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, f"eval-{task}", config, {"split": args.split})
    print(report.table(method=f"{task}:{args.split}"))
    return 0


def _cmd_embed(args) -> int:
    config = _load_experiment(args)
    split = load_dataset(args.data, args.split)
    tensors, meta, _ = load_checkpoint(args.checkpoint, expected_fingerprint=encoder_arch_fingerprint(config))
    if meta.get("kind") != "pretrain":
        raise SceneAlignError(f"embed expects a pretrain checkpoint, got {meta.get('kind')!r}")
    scene_encoder = SceneEncoder(config.scene_encoder)
    from .checkpoint import load_module_tensors

    load_module_tensors(scene_encoder, tensors, "scene_encoder.")
    rows = export_embeddings(split.scenes, scene_encoder)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_table(out, rows)
    print(f"wrote {len(rows)} embeddings to {out}")
    return 0


def _cmd_project(args) -> int:
    ids, types, matrix = read_embedding_table(args.embeddings)
    coords = project_2d(matrix)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for scene_id, scene_type, (x, y) in zip(ids, types, coords):
            f.write(f"{scene_id}\t{scene_type}\t{x!r}\t{y!r}\n")
    print(f"wrote 2d projection for {len(ids)} scenes to {out}")
    return 0


def ablation_config(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    pre = config.pretrain
    if preset == "full":
        pass
    elif preset == "single-view":
        pre = dataclasses.replace(pre, num_views=1)
    elif preset == "cosine-loss":
        pre = dataclasses.replace(pre, use_cosine_variant=True)
    elif preset == "no-text-loss":
        pre = dataclasses.replace(pre, use_text_loss=False)
    elif preset == "no-image-loss":
        pre = dataclasses.replace(pre, use_image_loss=False)
    else:
        raise ConfigError(f"unknown ablation preset {preset!r}")
    return dataclasses.replace(config, pretrain=pre)


def _cmd_ablation(args) -> int:
    config = _load_experiment(args)
    train = load_dataset(args.data, "train")
    eval_split = load_dataset(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for preset in ABLATION_PRESETS:
        variant = ablation_config(config, preset)
        variant_dir = out / preset.replace("-", "_")
        variant_dir.mkdir(parents=True, exist_ok=True)
        pre_result = run_pretraining(train, variant, out_dir=variant_dir)
        ft = finetune_sqa(train, variant, pretrained_path=pre_result.checkpoint_path, out_dir=variant_dir)
        report, _ = evaluate_sqa(eval_split, ft.bundle)
        rows.append((preset, report.em_at_1))
    with open(out / "ablation.json", "w") as f:
        json.dump({preset: em for preset, em in rows}, f, indent=2, sort_keys=True)
        f.write("\n")
    width = max(len(p) for p, _ in rows)
    lines = ["Method".ljust(width) + "  EM@1", "-" * width + "  -----"]
    for preset, em in rows:
        lines.append(preset.ljust(width) + f"  {100.0 * em:.2f}")
    table = "\n".join(lines)
    with open(out / "ablation_table.txt", "w") as f:
        f.write(table + "\n")
    _write_manifest(out, "ablation", config, {"split": args.split})
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenealign",
        description="Contrastive 3D scene-text-image alignment with QA heads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", default=None, required=config_required, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=None, help="worker thread bound")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=8, help="train scene count")
    p.add_argument("--val-scenes", type=int, default=4)
    p.add_argument("--test-scenes", type=int, default=4)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="pre-train the scene encoder")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-views", default=None, help="dump rendered views as PNG to this directory")
    p.set_defaults(func=_cmd_pretrain)

    for task in ("vqa", "sqa"):
        p = sub.add_parser(f"finetune-{task}", help=f"fine-tune the {task} model")
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--pretrained", default=None, help="pretrain checkpoint to initialize from")
        p.set_defaults(func=lambda a, _t=task: _cmd_finetune(a, _t))

        p = sub.add_parser(f"eval-{task}", help=f"evaluate a {task} checkpoint or prediction dump")
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--split", default="val", choices=["train", "val", "test"])
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--predictions", default=None, help="score an existing prediction dump")
        p.set_defaults(func=lambda a, _t=task: _cmd_eval(a, _t))

    p = sub.add_parser("embed", help="export scene embeddings from a pretrain checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("project", help="2d principal-component projection of an embedding table")
    common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("ablation", help="run the pre-training ablation presets end to end")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=_cmd_ablation)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SceneAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
