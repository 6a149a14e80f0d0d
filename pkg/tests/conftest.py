"""Shared fixtures: synthetic clouds, toy datasets, and on-disk manifests."""

from __future__ import annotations

import numpy as np
import pytest

from mlgcn.pointset import LabeledSample, PointCloud, normalize_unit_sphere


def sphere_cloud(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def cube_cloud(rng: np.random.Generator, n: int) -> np.ndarray:
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = rng.integers(0, 3, size=n)
    sign = rng.choice([-1.0, 1.0], size=n)
    pts[np.arange(n), axis] = sign
    return pts


def toy_classification_set(n_samples: int = 8, n_points: int = 128,
                           seed: int = 0) -> list[LabeledSample]:
    """Alternating sphere (class 0) and cube (class 1) surface samples."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        cls = i % 2
        pts = sphere_cloud(rng, n_points) if cls == 0 else cube_cloud(rng, n_points)
        samples.append(LabeledSample(normalize_unit_sphere(PointCloud(pts)), cls))
    return samples


def toy_segmentation_set(n_samples: int = 4, n_points: int = 64,
                         seed: int = 0) -> list[LabeledSample]:
    """One category; part 0 is the lower hemisphere, part 1 the upper."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n_samples):
        pts = sphere_cloud(rng, n_points)
        labels = (pts[:, 1] > 0).astype(np.int64)
        samples.append(LabeledSample(PointCloud(pts), 0, labels))
    return samples


def write_xyz(path, points: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in points:
            fh.write(f"{x:.8f} {y:.8f} {z:.8f}\n")


def write_toy_manifest(root, n_samples: int = 8, n_points: int = 128, seed: int = 0,
                       with_parts: bool = False):
    """Materialize a toy dataset as .xyz files plus a manifest; returns its path."""
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_samples):
        cls = i % 2
        pts = sphere_cloud(rng, n_points) if cls == 0 else cube_cloud(rng, n_points)
        name = f"sample{i}.xyz"
        write_xyz(root / name, pts)
        if with_parts:
            labels = (pts[:, 1] > 0).astype(int)
            label_name = f"sample{i}.parts"
            with open(root / label_name, "w", encoding="utf-8") as fh:
                fh.write("\n".join(str(v) for v in labels) + "\n")
            lines.append(f"{name},{cls},{label_name}")
        else:
            lines.append(f"{name},{cls}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


TETRA_OFF = """OFF
4 4 6
0.0 0.0 0.0
1.0 0.0 0.0
0.0 1.0 0.0
0.0 0.0 1.0
3 0 1 2
3 0 1 3
3 0 2 3
3 1 2 3
"""


@pytest.fixture
def tetra_off(tmp_path):
    path = tmp_path / "tetra.off"
    path.write_text(TETRA_OFF, encoding="utf-8")
    return path
