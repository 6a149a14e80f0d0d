"""Point-cloud domain types, dataset I/O, mesh sampling, and augmentation.

Clouds are plain ``(N, 3)`` float64 arrays wrapped in :class:`PointCloud`.
Mesh ingestion covers ASCII OFF files; datasets are described by a plain-text
manifest whose lines reference ``.xyz`` text clouds, OFF meshes, or packed
binary caches (magic ``MLGC``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateMesh,
    LabelLengthMismatch,
    MalformedFile,
    MissingFile,
)

CACHE_MAGIC = b"MLGC"


@dataclass
class PointCloud:
    """An unordered set of 3D points, shape ``(N, 3)``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass
class TriangleMesh:
    """Triangle soup: ``vertices (V, 3)`` float and ``faces (F, 3)`` int."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {verts.shape}")
        if faces.size and (faces.ndim != 2 or faces.shape[1] != 3):
            raise ValueError(f"faces must be (F, 3), got {faces.shape}")
        faces = faces.reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise ValueError("face index out of range")
        self.vertices = verts
        self.faces = faces

    def face_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class LabeledSample:
    """A cloud plus its class label and optional per-point part labels."""

    cloud: PointCloud
    class_label: int
    part_labels: np.ndarray | None = None
    path: str = field(default="", compare=False)

    def __post_init__(self):
        if self.part_labels is not None:
            labels = np.asarray(self.part_labels, dtype=np.int64)
            if labels.shape != (self.cloud.n_points,):
                raise LabelLengthMismatch(
                    f"{len(labels)} part labels for {self.cloud.n_points} points"
                )
            self.part_labels = labels


def load_off_mesh(path) -> TriangleMesh:
    """Parse an ASCII OFF file into a :class:`TriangleMesh`.

    Polygon faces with more than three vertices are fan-triangulated.
    Raises :class:`MalformedFile` with a line number on any parse error.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        raw = fh.readlines()

    # (line_number, tokens) for non-blank, non-comment lines
    rows = []
    for idx, line in enumerate(raw, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            rows.append((idx, stripped.split()))

    if not rows:
        raise MalformedFile(path, "empty file, expected OFF header")

    pos = 0
    line_no, tokens = rows[pos]
    header = tokens[0]
    if header == "OFF" and len(tokens) == 1:
        pos += 1
    elif header.startswith("OFF") and len(header) > 3:
        # tolerated in-the-wild variant: counts glued to the header token
        rows[pos] = (line_no, [header[3:]] + tokens[1:])
    elif header == "OFF":
        # "OFF nv nf ne" on one line
        rows[pos] = (line_no, tokens[1:])
    else:
        raise MalformedFile(path, f"expected OFF header, got {header!r}", line_no)

    if pos >= len(rows):
        raise MalformedFile(path, "missing counts line")
    line_no, tokens = rows[pos]
    if len(tokens) < 2:
        raise MalformedFile(path, "counts line needs vertex and face counts", line_no)
    try:
        n_vertices, n_faces = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise MalformedFile(path, f"non-numeric counts {tokens[:2]}", line_no) from None
    if n_vertices < 0 or n_faces < 0:
        raise MalformedFile(path, "negative counts", line_no)
    pos += 1

    if len(rows) - pos < n_vertices + n_faces:
        raise MalformedFile(path, f"expected {n_vertices} vertex and {n_faces} face lines")

    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        line_no, tokens = rows[pos + i]
        if len(tokens) < 3:
            raise MalformedFile(path, "vertex line needs 3 coordinates", line_no)
        try:
            vertices[i] = [float(t) for t in tokens[:3]]
        except ValueError:
            raise MalformedFile(path, f"non-numeric vertex {tokens[:3]}", line_no) from None
    pos += n_vertices

    triangles: list[tuple[int, int, int]] = []
    for i in range(n_faces):
        line_no, tokens = rows[pos + i]
        try:
            count = int(tokens[0])
            indices = [int(t) for t in tokens[1 : 1 + count]]
        except ValueError:
            raise MalformedFile(path, f"non-numeric face entry {tokens[0]!r}", line_no) from None
        if count < 3 or len(indices) != count:
            raise MalformedFile(path, f"face needs >= 3 vertex indices, got {count}", line_no)
        for v in indices:
            if v < 0 or v >= n_vertices:
                raise MalformedFile(path, f"face index {v} out of range", line_no)
        for j in range(1, count - 1):
            triangles.append((indices[0], indices[j], indices[j + 1]))

    return TriangleMesh(vertices, np.asarray(triangles, dtype=np.int64).reshape(-1, 3))


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> PointCloud:
    """Sample ``n`` points area-proportionally over the mesh surface.

    Faces are chosen with probability proportional to area; the position
    inside a triangle uses square-root barycentric sampling, so the result
    is uniform on the surface. Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    areas = mesh.face_areas()
    total = areas.sum()
    if mesh.faces.shape[0] == 0 or total <= 0.0:
        raise DegenerateMesh("mesh has zero total surface area")

    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.faces.shape[0], size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    u = np.sqrt(r1)

    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    w_a = (1.0 - u)[:, None]
    w_b = (u * (1.0 - r2))[:, None]
    w_c = (u * r2)[:, None]
    points = w_a * tri[:, 0] + w_b * tri[:, 1] + w_c * tri[:, 2]
    return PointCloud(points)


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center the cloud on its centroid and scale the farthest point to norm 1.

    If every point coincides the output is all zeros.
    """
    centered = cloud.points - cloud.points.mean(axis=0)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale <= 0.0:
        return PointCloud(np.zeros_like(centered))
    return PointCloud(centered / scale)


def augment(
    cloud: PointCloud,
    seed: int,
    rotate: bool = True,
    jitter_sigma: float = 0.01,
    jitter_clip: float = 0.05,
) -> PointCloud:
    """Random rotation about the vertical (y) axis plus clipped Gaussian jitter.

    Deterministic per seed; with ``rotate=False`` and ``jitter_sigma=0`` the
    input is returned unchanged.
    """
    if jitter_sigma < 0 or jitter_clip < 0:
        raise ValueError("jitter parameters must be non-negative")
    rng = np.random.default_rng(seed)
    points = cloud.points
    if rotate:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        points = points @ rot.T
    if jitter_sigma > 0:
        noise = rng.normal(0.0, jitter_sigma, size=points.shape)
        np.clip(noise, -jitter_clip, jitter_clip, out=noise)
        points = points + noise
    if not rotate and jitter_sigma == 0:
        return cloud
    return PointCloud(points)


def write_cloud_cache(path, cloud: PointCloud) -> None:
    """Write a packed little-endian cloud cache: magic, u32 N, f32 xyz triples."""
    data = cloud.points.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", cloud.n_points))
        fh.write(data)


def read_cloud_cache(path) -> PointCloud:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise MalformedFile(path, f"bad cache magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        payload = fh.read(12 * count)
    if len(payload) != 12 * count or count < 1:
        raise MalformedFile(path, f"truncated cache, expected {count} points")
    points = np.frombuffer(payload, dtype="<f4").reshape(count, 3).astype(np.float64)
    return PointCloud(points)


def _read_xyz(path) -> PointCloud:
    points = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) < 3:
                raise MalformedFile(path, "point line needs 3 coordinates", line_no)
            try:
                points.append([float(t) for t in tokens[:3]])
            except ValueError:
                raise MalformedFile(path, f"non-numeric point {tokens[:3]}", line_no) from None
    if not points:
        raise MalformedFile(path, "no points in file")
    return PointCloud(np.asarray(points, dtype=np.float64))


def _read_part_labels(path) -> np.ndarray:
    labels = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                labels.append(int(stripped.split()[0]))
            except ValueError:
                raise MalformedFile(path, f"non-integer label {stripped!r}", line_no) from None
    return np.asarray(labels, dtype=np.int64)


def _starts_with_cache_magic(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == CACHE_MAGIC


def load_cloud_file(path, n_points: int = 1024, seed: int = 0) -> PointCloud:
    """Load one cloud from ``.xyz`` text, a binary cache, or an OFF mesh.

    OFF meshes are sampled to ``n_points`` with the given seed; text and
    cached clouds are returned verbatim.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    if _starts_with_cache_magic(path):
        return read_cloud_cache(path)
    if path.suffix.lower() == ".off":
        return sample_surface(load_off_mesh(path), n_points, seed)
    return _read_xyz(path)


def read_dataset(manifest, n_points: int = 1024, seed: int = 0) -> list[LabeledSample]:
    """Read all samples listed in a manifest file.

    Each manifest line is ``<relative-path>,<class-id>[,<part-label-path>]``;
    paths resolve relative to the manifest's directory. Blank lines and
    ``#`` comments are skipped. Mesh entries are sampled with per-entry
    seeds derived from ``seed``, so two reads are identical.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise MissingFile(manifest)
    base = manifest.parent

    samples: list[LabeledSample] = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = [f.strip() for f in stripped.split(",")]
            if len(fields) not in (2, 3) or not fields[0]:
                raise MalformedFile(manifest, f"expected 'path,class[,labels]', got {stripped!r}", line_no)
            try:
                class_label = int(fields[1])
            except ValueError:
                raise MalformedFile(manifest, f"non-integer class id {fields[1]!r}", line_no) from None

            cloud = load_cloud_file(base / fields[0], n_points=n_points, seed=seed + len(samples))
            part_labels = None
            if len(fields) == 3 and fields[2]:
                label_path = base / fields[2]
                if not label_path.is_file():
                    raise MissingFile(label_path)
                part_labels = _read_part_labels(label_path)
                if part_labels.shape[0] != cloud.n_points:
                    raise LabelLengthMismatch(
                        f"{label_path}: {part_labels.shape[0]} labels for {cloud.n_points} points"
                    )
            samples.append(
                LabeledSample(cloud, class_label, part_labels, path=str(base / fields[0]))
            )
    return samples
