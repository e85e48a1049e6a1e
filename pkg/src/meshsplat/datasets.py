"""Posed multi-frame datasets, including the public transforms_*.json layout
(camera_angle_x, per-frame camera-to-world matrix, timestamp, image path)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import EmptyDataset, MissingImage, ParseError
from .images import load_png


@dataclass
class Frame:
    camera: Camera
    time: float
    split: str = "train"
    image_path: str | None = None
    image: np.ndarray | None = None   # linear float, lazily loaded from path

    def get_image(self) -> np.ndarray:
        if self.image is None:
            if self.image_path is None:
                raise MissingImage("frame has neither pixels nor a path")
            self.image = load_png(self.image_path)
        return self.image


@dataclass
class Dataset:
    frames: list

    def __post_init__(self):
        if not self.frames:
            raise EmptyDataset("dataset has no frames")
        shapes = {(f.camera.height, f.camera.width) for f in self.frames}
        if len(shapes) != 1:
            raise ParseError(f"frames disagree on image size: {sorted(shapes)}")

    def split(self, name: str) -> list:
        return [f for f in self.frames if f.split == name]

    @property
    def train_frames(self) -> list:
        return self.split("train")

    @property
    def test_frames(self) -> list:
        return self.split("test")


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ParseError(f"{where}: missing required field '{key}'")
    return d[key]


def _load_split(root: str, split: str) -> list:
    path = os.path.join(root, f"transforms_{split}.json")
    if not os.path.exists(path):
        return []
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    angle_x = float(_require(doc, "camera_angle_x", path))
    frames_doc = _require(doc, "frames", path)
    frames = []
    for i, fr in enumerate(frames_doc):
        where = f"{path} frames[{i}]"
        file_path = _require(fr, "file_path", where)
        matrix = np.array(_require(fr, "transform_matrix", where), float)
        if matrix.shape != (4, 4):
            raise ParseError(f"{where}: transform_matrix must be 4x4")
        t = float(fr.get("time", 0.0))
        t = min(max(t, 0.0), 1.0)
        img_path = os.path.join(root, file_path)
        if not os.path.exists(img_path):
            if os.path.exists(img_path + ".png"):
                img_path = img_path + ".png"
            else:
                raise MissingImage(f"{where}: no image at {img_path}[.png]")
        from PIL import Image

        with Image.open(img_path) as im:
            width, height = im.size
        c2w = matrix
        R = c2w[:3, :3].T
        tr = -R @ c2w[:3, 3]
        fx = width / (2.0 * np.tan(angle_x / 2.0))
        cam = Camera(R, tr, fx, fx, width / 2.0, height / 2.0, width, height,
                     near=0.01, far=100.0)
        frames.append(Frame(cam, t, split, image_path=img_path))
    return frames


def load_dnerf_dataset(root: str) -> Dataset:
    """Load transforms_{train,test}.json plus referenced images."""
    frames = _load_split(root, "train") + _load_split(root, "test")
    if not frames:
        raise ParseError(f"{root}: no transforms_train.json or transforms_test.json")
    return Dataset(frames)


def write_dnerf_dataset(dataset: Dataset, root: str, fov_x: float) -> None:
    """Write a dataset in the same layout (PNG frames + transforms JSON)."""
    from .images import save_png

    os.makedirs(root, exist_ok=True)
    by_split: dict[str, list] = {}
    for f in dataset.frames:
        by_split.setdefault(f.split, []).append(f)
    for split, frames in sorted(by_split.items()):
        doc = {"camera_angle_x": fov_x, "frames": []}
        img_dir = os.path.join(root, split)
        os.makedirs(img_dir, exist_ok=True)
        for i, fr in enumerate(frames):
            rel = f"./{split}/r_{i:03d}"
            save_png(os.path.join(root, rel + ".png"), fr.get_image())
            R = fr.camera.R
            c2w = np.eye(4)
            c2w[:3, :3] = R.T
            c2w[:3, 3] = -R.T @ fr.camera.t
            doc["frames"].append({
                "file_path": rel,
                "time": fr.time,
                "transform_matrix": c2w.tolist(),
            })
        with open(os.path.join(root, f"transforms_{split}.json"), "w") as f:
            json.dump(doc, f, indent=1)
