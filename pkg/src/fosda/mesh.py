"""Triangle meshes: data model, OFF/OBJ I/O, generators and Procrustes alignment."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConnectivityMismatch, DataError, LimitExceeded, ParseError, ValidationError

MAX_ICOSPHERE_LEVEL = 7


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (s, 3)
        Vertex coordinates.
    faces : array_like of int, shape (f, 3)
        Vertex indices of each triangle, consistently oriented.
    validate : bool, default=True
        Check the mesh invariants on construction.

    Raises
    ------
    ValidationError
        Index out of range, repeated vertex in a face, zero-area triangle,
        non-manifold edge or inconsistent orientation. The message names the
        offending face.
    """

    vertices: np.ndarray
    faces: np.ndarray
    validate: bool = True

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float, copy=True)
        f = np.array(self.faces, dtype=np.int64, copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must have shape (s, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValidationError(f"faces must have shape (f, 3), got {f.shape}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.validate:
            _validate(v, f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, shape (e, 2)."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def is_closed(self) -> bool:
        _, counts = _edge_counts(self.faces)
        return bool(counts.size) and bool(np.all(counts == 2))

    @property
    def bounding_box_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        return TriangleMesh(vertices, self.faces, validate=self.validate)


def _edge_counts(faces):
    e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def _validate(v: np.ndarray, f: np.ndarray) -> None:
    s = v.shape[0]
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(v), axis=1))[0])
        raise ValidationError(f"vertex {bad}: non-finite coordinate")
    if f.shape[0] == 0:
        return
    out = (f < 0) | (f >= s)
    if out.any():
        i, j = np.argwhere(out)[0]
        raise ValidationError(f"face {i}: index {f[i, j]} out of range [0, {s})")
    rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if rep.any():
        raise ValidationError(f"face {int(np.flatnonzero(rep)[0])}: repeated vertex index")

    tri = v[f]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    und = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges = np.unique(und, axis=0)
    mean_edge = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1).mean()
    small = area <= 1e-12 * mean_edge**2
    if small.any():
        raise ValidationError(f"face {int(np.flatnonzero(small)[0])}: degenerate (zero-area) triangle")

    _, inverse, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    over = counts[inverse] > 2
    if over.any():
        k = int(np.flatnonzero(over)[0])
        raise ValidationError(f"face {k // 3}: edge shared by more than two faces (non-manifold)")

    directed = f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    _, dinv, dcounts = np.unique(directed, axis=0, return_inverse=True, return_counts=True)
    dup = dcounts[dinv.reshape(-1)] > 1
    if dup.any():
        k = int(np.flatnonzero(dup)[-1])
        raise ValidationError(f"face {k // 3}: orientation inconsistent with a neighbouring face")


# ----------------------------------------------------------------------------
# I/O


def _data_lines(text: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_off(text: str):
    lines = list(_data_lines(text))
    if not lines:
        raise ParseError("empty OFF file")
    lineno, head = lines[0]
    if head[0] != "OFF":
        raise ParseError(f"line {lineno}: expected 'OFF' header, got {head[0]!r}")
    rest = head[1:]
    pos = 1
    if not rest:
        if len(lines) < 2:
            raise ParseError("missing counts line")
        lineno, rest = lines[1]
        pos = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise ParseError(f"line {lineno}: malformed counts line") from None
    if nv < 0 or nf < 0:
        raise ParseError(f"line {lineno}: negative element count")
    if len(lines) < pos + nv + nf:
        raise ParseError(f"expected {nv} vertices and {nf} faces, file is truncated")
    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = lines[pos + i]
        try:
            verts[i] = [float(t) for t in tok[:3]]
        except ValueError:
            raise ParseError(f"line {lineno}: malformed vertex") from None
        if len(tok) < 3:
            raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, tok = lines[pos + nv + i]
        try:
            k = int(tok[0])
            idx = [int(t) for t in tok[1 : 1 + k]]
        except (ValueError, IndexError):
            raise ParseError(f"line {lineno}: malformed face") from None
        if k != 3 or len(idx) != 3:
            raise ParseError(f"line {lineno}: only triangular faces are supported")
        faces[i] = idx
    return verts, faces


def _parse_obj(text: str):
    verts, faces = [], []
    for lineno, tok in _data_lines(text):
        if tok[0] == "v":
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise ParseError(f"line {lineno}: malformed vertex") from None
            if len(verts[-1]) != 3:
                raise ParseError(f"line {lineno}: vertex needs 3 coordinates")
        elif tok[0] == "f":
            if len(tok) != 4:
                raise ParseError(f"line {lineno}: only triangular faces are supported")
            idx = []
            for t in tok[1:]:
                try:
                    k = int(t.split("/")[0])
                except ValueError:
                    raise ParseError(f"line {lineno}: malformed face") from None
                # OBJ is 1-based; negative indices count back from the last vertex
                idx.append(k - 1 if k > 0 else len(verts) + k)
            faces.append(idx)
    return np.asarray(verts, dtype=float).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Read a mesh from an OFF or OBJ file.

    The format is inferred from the file extension when not given.
    """
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).upper()
    if fmt not in ("OFF", "OBJ"):
        raise ParseError(f"unsupported mesh format {fmt!r}")
    with open(path) as fh:
        text = fh.read()
    verts, faces = _parse_off(text) if fmt == "OFF" else _parse_obj(text)
    return TriangleMesh(verts, faces)


def format_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}"]
    out.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices)
    out.extend(f"3 {i} {j} {k}" for i, j, k in mesh.faces)
    return "\n".join(out) + "\n"


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write ``mesh`` as OFF with 17 significant digits (exact round trip)."""
    with open(path, "w") as fh:
        fh.write(format_off(mesh))


# ----------------------------------------------------------------------------
# generators

_PHI = (1.0 + 5.0**0.5) / 2.0
_ICO_VERTS = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ]
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def icosphere(subdivisions: int, radius: float = 1.0) -> TriangleMesh:
    """Sphere mesh by repeated 4-to-1 subdivision of the icosahedron.

    Has ``10 * 4**subdivisions + 2`` vertices, all at distance ``radius``
    from the origin, with outward-facing orientation.
    """
    if subdivisions < 0:
        raise DataError("subdivisions must be non-negative")
    if subdivisions > MAX_ICOSPHERE_LEVEL:
        raise LimitExceeded(f"subdivisions={subdivisions} exceeds the limit of {MAX_ICOSPHERE_LEVEL}")
    if not radius > 0:
        raise DataError("radius must be positive")
    verts = [tuple(p) for p in _ICO_VERTS / np.linalg.norm(_ICO_VERTS, axis=1, keepdims=True)]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = np.add(verts[a], verts[b])
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts)
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def torus(n_major: int, n_minor: int, major_radius: float = 1.0, minor_radius: float = 0.4) -> TriangleMesh:
    """Closed genus-1 grid mesh with ``n_major * n_minor`` vertices."""
    if n_major < 3 or n_minor < 3:
        raise DataError("torus needs at least 3 subdivisions in each direction")
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    ring = major_radius + minor_radius * np.cos(W)
    v = np.stack([ring * np.cos(U), ring * np.sin(U), minor_radius * np.sin(W)], axis=-1).reshape(-1, 3)
    idx = lambda i, j: (i % n_major) * n_minor + (j % n_minor)  # noqa: E731
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


# ----------------------------------------------------------------------------
# Procrustes


def _normalize(x: np.ndarray) -> np.ndarray:
    x = x - x.mean(axis=0)
    return x / np.sqrt((x**2).sum())


def _rotation_onto(x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Proper rotation R minimizing |x R - target| (Kabsch, det R = +1)."""
    u, _, vt = np.linalg.svd(x.T @ target)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _canonical_frame(x: np.ndarray) -> np.ndarray:
    # principal axes, each oriented so the third moment along it is positive
    _, vecs = np.linalg.eigh(x.T @ x)
    axes = vecs[:, ::-1].copy()
    for j in range(2):
        if np.sum((x @ axes[:, j]) ** 3) < 0:
            axes[:, j] *= -1
    if np.linalg.det(axes) < 0:
        axes[:, 2] *= -1
    return axes


def generalized_procrustes(
    meshes: Sequence[TriangleMesh], tol: float = 1e-10, max_iter: int = 100
) -> tuple[list[TriangleMesh], TriangleMesh]:
    """Remove translation, rotation and scale from corresponded meshes.

    Each configuration is centered and scaled to unit centroid size, then
    rotated (reflections excluded) onto the running mean until the mean
    changes by less than ``tol``. The result is expressed in the principal
    axis frame of the template so that it does not depend on the pose of
    any input.

    Returns
    -------
    aligned : list of TriangleMesh
    template : TriangleMesh
        Vertex-wise mean of the aligned meshes.
    """
    if len(meshes) < 2:
        raise DataError("generalized Procrustes analysis needs at least two meshes")
    ref = meshes[0]
    for i, m in enumerate(meshes[1:], start=1):
        if m.n_vertices != ref.n_vertices or not np.array_equal(m.faces, ref.faces):
            raise ConnectivityMismatch(f"mesh {i} does not share the connectivity of mesh 0")

    shapes = [_normalize(m.vertices) for m in meshes]
    mean = shapes[0]
    for _ in range(max_iter):
        shapes = [x @ _rotation_onto(x, mean) for x in shapes]
        new_mean = _normalize(np.mean(shapes, axis=0))
        change = np.sqrt(((new_mean - mean) ** 2).sum())
        mean = new_mean
        if change < tol:
            break
    shapes = [x @ _rotation_onto(x, mean) for x in shapes]
    frame = _canonical_frame(np.mean(shapes, axis=0))
    aligned = [x @ frame for x in shapes]
    template = np.mean(aligned, axis=0)
    return [m.with_vertices(x) for m, x in zip(meshes, aligned)], ref.with_vertices(template)
