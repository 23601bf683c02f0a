"""Scene-bundle file formats and verdict CSV serialization.

A bundle directory holds manifest.json (metadata, camera, GT), cloud.bin
(little-endian float32 xyz triples), one binary PGM per instance mask, and
hypotheses.json. All output is byte-deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import BoundingBox3D, CameraModel
from .pipeline import Hypothesis, Verdict
from .scene import Scene
from .shape_manifold import ShapeFamilyParams

BUNDLE_FORMAT = "plausiverify-bundle-v1"

VERDICT_COLUMNS = (
    ["scene_id", "hypothesis_id", "label", "mode", "stage", "plausible",
     "final_energy"]
    + [f"{t}_c1" for t in ("e_sil", "e_cd", "e_hog", "e_rot", "total")]
    + [f"{t}_c2" for t in ("e_sil", "e_cd", "e_hog", "e_rot", "total")]
    + [f"xi_{i}" for i in range(12)]
    + ["diagnostic"]
)


def _fmt(x) -> str:
    return repr(float(x))


# --- PGM ----------------------------------------------------------------------

def write_pgm(path, img) -> None:
    """8-bit binary (P5) portable graymap."""
    img = np.asarray(img, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes(order="C"))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise ConfigError(f"{path}: not a binary PGM")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = map(int, line.split())
        maxval = int(fh.readline())
        if maxval != 255:
            raise ConfigError(f"{path}: unsupported maxval {maxval}")
        data = fh.read(w * h)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_mask_pgm(path, mask) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) > 127


def write_silhouette_pgm(path, sil) -> None:
    """Debug export: value = round(255 * pi)."""
    write_pgm(path, np.round(255.0 * sil.values).astype(np.uint8))


# --- point cloud --------------------------------------------------------------

def write_cloud(path, pts) -> None:
    np.asarray(pts, dtype="<f4").tofile(path)


def read_cloud(path, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if len(data) != 3 * count:
        raise ConfigError(f"{path}: expected {3 * count} floats, got {len(data)}")
    return data.reshape(count, 3).astype(np.float64)


# --- json helpers -------------------------------------------------------------

def camera_to_dict(cam: CameraModel) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "T_cam_ego": cam.T_cam_ego.tolist()}


def camera_from_dict(d: dict) -> CameraModel:
    return CameraModel(d["fx"], d["fy"], d["cx"], d["cy"], d["width"],
                       d["height"], np.array(d["T_cam_ego"]))


def box_to_dict(box: BoundingBox3D) -> dict:
    return {"center": box.center.tolist(), "dims": box.dims.tolist(),
            "quat": box.quat.tolist()}


def box_from_dict(d: dict) -> BoundingBox3D:
    return BoundingBox3D(np.array(d["center"]), np.array(d["dims"]),
                         np.array(d["quat"]))


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- scene bundles ------------------------------------------------------------

def write_scene_bundle(bundle_dir, generated, hypotheses, scene_id: str,
                       seed: int) -> None:
    """Write one scene (see module docstring for the layout)."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    scene = generated.scene

    write_cloud(bundle_dir / "cloud.bin", scene.points)
    mask_files = []
    for i, mask in enumerate(scene.masks):
        name = f"mask_{i:03d}.pgm"
        write_mask_pgm(bundle_dir / name, mask)
        mask_files.append(name)

    gt_boxes = []
    for box, params in zip(generated.gt_boxes, generated.gt_params):
        entry = box_to_dict(box)
        entry["shape_params"] = params.as_dict() if params is not None else None
        gt_boxes.append(entry)

    manifest = {
        "format": BUNDLE_FORMAT,
        "scene_id": scene_id,
        "seed": seed,
        "camera": camera_to_dict(scene.cam),
        "sensor_origin": scene.sensor_origin.tolist(),
        "cloud_file": "cloud.bin",
        "cloud_count": int(len(scene.points)),
        "mask_files": mask_files,
        "ground_truth": {
            "plane": [generated.plane.a, generated.plane.b,
                      generated.plane.c, generated.plane.d],
            "boxes": gt_boxes,
        },
        "hypotheses_file": "hypotheses.json",
    }
    _dump_json(bundle_dir / "manifest.json", manifest)

    hyp_entries = []
    for h in hypotheses:
        entry = box_to_dict(h.box)
        entry.update({"id": h.id, "score": h.score, "label": h.label,
                      "mode": h.mode})
        hyp_entries.append(entry)
    _dump_json(bundle_dir / "hypotheses.json", {"hypotheses": hyp_entries})


def load_scene_bundle(bundle_dir):
    """Returns (scene_id, Scene, hypotheses, manifest dict)."""
    bundle_dir = Path(bundle_dir)
    manifest_path = bundle_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{bundle_dir}: no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ConfigError(f"{manifest_path}: unknown format "
                          f"{manifest.get('format')!r}")

    cam = camera_from_dict(manifest["camera"])
    points = read_cloud(bundle_dir / manifest["cloud_file"],
                        manifest["cloud_count"])
    masks = [read_mask_pgm(bundle_dir / name)
             for name in manifest["mask_files"]]
    scene = Scene(points, cam, masks, np.array(manifest["sensor_origin"]))

    hypotheses = []
    with open(bundle_dir / manifest["hypotheses_file"]) as fh:
        for entry in json.load(fh)["hypotheses"]:
            hypotheses.append(Hypothesis(
                box_from_dict(entry), score=entry.get("score", 1.0),
                id=entry["id"], label=entry.get("label"),
                mode=entry.get("mode")))
    return manifest["scene_id"], scene, hypotheses, manifest


def find_scene_dirs(root) -> list:
    """Scene directories under root (or root itself), sorted by name."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir()
                  if p.is_dir() and (p / "manifest.json").exists())
    if not dirs:
        raise ConfigError(f"{root}: no scene bundles found")
    return dirs


# --- verdict CSV ---------------------------------------------------------------

def _breakdown_cells(bd):
    if bd is None:
        return [""] * 5
    return [_fmt(v) for v in bd.as_tuple()]


def write_verdicts_csv(path, rows) -> None:
    """rows: iterable of (scene_id, Verdict)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VERDICT_COLUMNS)
        for scene_id, v in rows:
            state = ([""] * 12 if v.optimized_state is None
                     else [_fmt(x) for x in v.optimized_state])
            writer.writerow(
                [scene_id, v.hypothesis_id, v.label or "", v.mode or "",
                 v.stage, str(v.plausible), _fmt(v.final_energy)]
                + _breakdown_cells(v.breakdown_c1)
                + _breakdown_cells(v.breakdown_c2)
                + state + [v.diagnostic])


def read_verdicts_csv(path) -> list:
    """List of row dicts; numeric fields parsed."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            row["plausible"] = int(row["plausible"])
            row["final_energy"] = float(row["final_energy"])
            rows.append(row)
    if not rows:
        raise ConfigError(f"{path}: no verdicts")
    return rows


def resolve_jobs(jobs: int | None) -> int:
    """--jobs flag with PLAUSI_JOBS fallback; defaults to 1."""
    if jobs is not None:
        return max(1, jobs)
    env = os.environ.get("PLAUSI_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"PLAUSI_JOBS={env!r} is not an integer") from err
    return 1
