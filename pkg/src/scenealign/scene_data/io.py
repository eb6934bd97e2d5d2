"""Canonical on-disk dataset schema and loaders.

Layout (one directory per split under the dataset root):

    <root>/<split>/scenes/<scene_id>.ply               point cloud
    <root>/<split>/scenes/<scene_id>.annotations.json  boxes, captions, labels
    <root>/<split>/qa.json                             array of QA records
    <root>/<split>/sqa.json                            array of situation records

PLY files are ASCII with per-vertex properties x y z red green blue; colors
are floats in [0, 1] (uchar 0-255 colors are also accepted on read, for
adapters that export from real scan datasets).

``<scene_id>.annotations.json`` keys:
    scene_id: str          must match the file stem
    scene_type: str        coarse scene label used for embedding analysis
    captions: [str]        one or more scene descriptions
    classes: [str]         the full label set (identical across the split)
    objects: [{instance_id: int, class_id: int,
               box: {center: [x, y, z], size: [sx, sy, sz]}}]

``qa.json`` records:
    question_id, scene_id, question: str
    answers: [str]                     non-empty
    referred_instance_ids: [int]       instances the question refers to
    referred_class_ids: [int]

``sqa.json`` records:
    situation_id, scene_id, situation_text, question: str
    position: [x, y, z]
    rotation: [x, y, z, w]             unit quaternion
    answers: [str]
"""

import json
from pathlib import Path
from typing import List, NamedTuple

import numpy as np

from ..errors import DatasetError, ValidationError
from .types import (
    AxisAlignedBox,
    ObjectAnnotation,
    PointCloud,
    QARecord,
    SceneSample,
    SituationRecord,
)

SPLITS = ("train", "val", "test")


class LoadedSplit(NamedTuple):
    scenes: List[SceneSample]
    qa: List[QARecord]
    sqa: List[SituationRecord]


def write_ply(path: Path, cloud: PointCloud) -> None:
    rows = np.concatenate([cloud.points, cloud.colors], axis=1)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write("comment colors are floats in [0, 1]\n")
        f.write(f"element vertex {cloud.n}\n")
        for prop in ("x", "y", "z", "red", "green", "blue"):
            f.write(f"property float {prop}\n")
        f.write("end_header\n")
        for row in rows:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_ply(path: Path) -> PointCloud:
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != "ply":
        raise DatasetError(f"{path}: not a PLY file")
    n_vertex = None
    props = []
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "element" and tok[1] == "vertex":
            n_vertex = int(tok[2])
        elif tok[0] == "property" and n_vertex is not None:
            props.append((tok[1], tok[2]))
        elif tok[0] == "end_header":
            body_at = i + 1
            break
    if n_vertex is None or body_at is None:
        raise DatasetError(f"{path}: malformed PLY header")
    names = [p[1] for p in props]
    if names[:6] != ["x", "y", "z", "red", "green", "blue"]:
        raise DatasetError(f"{path}: expected x y z red green blue properties, got {names}")
    data = np.loadtxt(lines[body_at : body_at + n_vertex], dtype=np.float64, ndmin=2)
    if data.shape[0] != n_vertex:
        raise DatasetError(f"{path}: expected {n_vertex} vertices, found {data.shape[0]}")
    colors = data[:, 3:6]
    if any(t in ("uchar", "uint8") for t, _ in props[3:6]):
        colors = colors / 255.0
    return PointCloud(points=data[:, 0:3], colors=colors)


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _annotations_payload(scene: SceneSample, class_names: List[str]) -> dict:
    return {
        "scene_id": scene.scene_id,
        "scene_type": scene.scene_type,
        "captions": list(scene.captions),
        "classes": list(class_names),
        "objects": [
            {
                "instance_id": a.instance_id,
                "class_id": a.class_id,
                "box": {"center": a.box.center.tolist(), "size": a.box.size.tolist()},
            }
            for a in scene.annotations
        ],
    }


def save_dataset(
    root,
    split: str,
    scenes: List[SceneSample],
    qa: List[QARecord],
    sqa: List[SituationRecord],
    class_names: List[str],
) -> Path:
    """Write one split in the canonical layout; returns the split directory."""
    split_dir = Path(root) / split
    scene_dir = split_dir / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        write_ply(scene_dir / f"{scene.scene_id}.ply", scene.cloud)
        _write_json(
            scene_dir / f"{scene.scene_id}.annotations.json",
            _annotations_payload(scene, class_names),
        )
    _write_json(
        split_dir / "qa.json",
        [
            {
                "question_id": r.question_id,
                "scene_id": r.scene_id,
                "question": r.question,
                "answers": list(r.answers),
                "referred_instance_ids": list(r.referred_instance_ids),
                "referred_class_ids": list(r.referred_class_ids),
            }
            for r in sorted(qa, key=lambda r: (r.scene_id, r.question_id))
        ],
    )
    _write_json(
        split_dir / "sqa.json",
        [
            {
                "situation_id": r.situation_id,
                "scene_id": r.scene_id,
                "situation_text": r.situation_text,
                "position": r.position.tolist(),
                "rotation": r.rotation.tolist(),
                "question": r.question,
                "answers": list(r.answers),
            }
            for r in sorted(sqa, key=lambda r: (r.scene_id, r.situation_id))
        ],
    )
    return split_dir


def read_class_names(root, split: str) -> List[str]:
    """Label set of a split, read from its first (id-ordered) scene."""
    scene_dir = Path(root) / split / "scenes"
    ann_files = sorted(scene_dir.glob("*.annotations.json"))
    if not ann_files:
        raise DatasetError(f"no annotation files under {scene_dir}")
    with open(ann_files[0]) as f:
        return list(json.load(f)["classes"])


def load_dataset(root, split: str) -> LoadedSplit:
    """Load one split and validate all cross-references.

    Raises DatasetError when files are missing or malformed and
    ValidationError (naming the offending record) when a reference dangles.
    Output lists are ordered by id.
    """
    split_dir = Path(root) / split
    scene_dir = split_dir / "scenes"
    if not split_dir.is_dir():
        raise DatasetError(f"split directory not found: {split_dir}")
    ply_files = sorted(scene_dir.glob("*.ply"))
    if not ply_files:
        raise DatasetError(f"no scene files under {scene_dir}")

    scenes = []
    classes_seen = None
    for ply_path in ply_files:
        ann_path = ply_path.parent / (ply_path.stem + ".annotations.json")
        if not ann_path.exists():
            raise DatasetError(f"missing annotations for {ply_path.name}")
        cloud = read_ply(ply_path)
        try:
            with open(ann_path) as f:
                meta = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot parse {ann_path}: {exc}") from exc
        if meta.get("scene_id") != ply_path.stem:
            raise ValidationError(
                f"{ann_path.name}: scene_id {meta.get('scene_id')!r} != file stem {ply_path.stem!r}"
            )
        classes = list(meta.get("classes", []))
        if classes_seen is None:
            classes_seen = classes
        elif classes != classes_seen:
            raise ValidationError(f"{ann_path.name}: class list differs from the split's first scene")
        annotations = []
        for obj in meta.get("objects", []):
            class_id = int(obj["class_id"])
            if classes and not 0 <= class_id < len(classes):
                raise ValidationError(
                    f"{ann_path.name}: object {obj.get('instance_id')} has class_id {class_id} "
                    f"outside [0, {len(classes)})"
                )
            annotations.append(
                ObjectAnnotation(
                    box=AxisAlignedBox(
                        center=np.array(obj["box"]["center"]),
                        size=np.array(obj["box"]["size"]),
                    ),
                    class_id=class_id,
                    instance_id=int(obj["instance_id"]),
                )
            )
        scenes.append(
            SceneSample(
                cloud=cloud,
                annotations=tuple(annotations),
                captions=tuple(meta.get("captions", [])),
                scene_id=meta["scene_id"],
                scene_type=meta.get("scene_type", ""),
            )
        )
    scenes.sort(key=lambda s: s.scene_id)
    by_id = {s.scene_id: s for s in scenes}

    qa_records = []
    qa_path = split_dir / "qa.json"
    if qa_path.exists():
        with open(qa_path) as f:
            raw = json.load(f)
        for rec in raw:
            qid = rec.get("question_id", "")
            scene = by_id.get(rec["scene_id"])
            if scene is None:
                raise ValidationError(
                    f"qa.json record {qid!r} names unknown scene_id {rec['scene_id']!r}"
                )
            known = {a.instance_id for a in scene.annotations}
            for iid in rec.get("referred_instance_ids", []):
                if iid not in known:
                    raise ValidationError(
                        f"qa.json record {qid!r} refers to unknown instance {iid} "
                        f"in scene {rec['scene_id']!r}"
                    )
            qa_records.append(
                QARecord(
                    scene_id=rec["scene_id"],
                    question=rec["question"],
                    answers=tuple(rec["answers"]),
                    referred_instance_ids=tuple(rec.get("referred_instance_ids", [])),
                    referred_class_ids=tuple(rec.get("referred_class_ids", [])),
                    question_id=qid,
                )
            )
        qa_records.sort(key=lambda r: (r.scene_id, r.question_id))

    sqa_records = []
    sqa_path = split_dir / "sqa.json"
    if sqa_path.exists():
        with open(sqa_path) as f:
            raw = json.load(f)
        for rec in raw:
            sid = rec.get("situation_id", "")
            if rec["scene_id"] not in by_id:
                raise ValidationError(
                    f"sqa.json record {sid!r} names unknown scene_id {rec['scene_id']!r}"
                )
            sqa_records.append(
                SituationRecord(
                    scene_id=rec["scene_id"],
                    situation_text=rec["situation_text"],
                    position=np.array(rec["position"]),
                    rotation=np.array(rec["rotation"]),
                    question=rec["question"],
                    answers=tuple(rec["answers"]),
                    situation_id=sid,
                )
            )
        sqa_records.sort(key=lambda r: (r.scene_id, r.situation_id))

    return LoadedSplit(scenes=scenes, qa=qa_records, sqa=sqa_records)
