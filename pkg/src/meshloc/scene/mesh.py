"""Triangle meshes with per-vertex appearance and semantics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_SLOTS = {"position": slice(0, 3), "normal": slice(3, 6), "color": slice(6, 9), "semantic": slice(9, 12)}


class MeshFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class PaletteEntry:
    name: str
    color: tuple
    dynamic: bool = False


@dataclass(frozen=True)
class SemanticPalette:
    entries: tuple = ()

    def static_mask(self, semantics: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        """True for vertices whose semantic color is not a dynamic entry."""
        static = np.ones(len(semantics), dtype=bool)
        for e in self.entries:
            if e.dynamic:
                hit = np.all(np.abs(semantics - np.asarray(e.color)) <= tol, axis=1)
                static &= ~hit
        return static

    def to_list(self) -> list:
        return [dict(name=e.name, color=list(e.color), dynamic=e.dynamic) for e in self.entries]

    @classmethod
    def from_list(cls, items) -> "SemanticPalette":
        return cls(tuple(PaletteEntry(d["name"], tuple(float(c) for c in d["color"]), bool(d.get("dynamic", False)))
                         for d in items))


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray
    semantics: np.ndarray
    faces: np.ndarray
    static: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.positions)
        object.__setattr__(self, "positions", _frozen(self.positions, np.float64).reshape(n, 3))
        object.__setattr__(self, "normals", _frozen(self.normals, np.float64).reshape(n, 3))
        object.__setattr__(self, "colors", _frozen(self.colors, np.float64).reshape(n, 3))
        object.__setattr__(self, "semantics", _frozen(self.semantics, np.float64).reshape(n, 3))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        static = np.ones(n, dtype=bool) if self.static is None else self.static
        object.__setattr__(self, "static", _frozen(static, bool).reshape(n))

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def features(self) -> np.ndarray:
        """V x 12 matrix: position, normal, color, semantic color."""
        return np.concatenate([self.positions, self.normals, self.colors, self.semantics], axis=1)

    def with_positions(self, positions, normals=None) -> "TriangleMesh":
        return TriangleMesh(positions, self.normals if normals is None else normals, self.colors,
                            self.semantics, self.faces, self.static)

    def validate(self) -> None:
        n = self.n_vertices
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= n):
            raise MeshFormatError("face index out of range")
        if not np.all(np.isfinite(self.positions)):
            raise MeshFormatError("non-finite vertex coordinate")
        if np.any(np.abs(np.linalg.norm(self.normals, axis=1) - 1.0) > 1e-6):
            raise MeshFormatError("normals must have unit length")
        for name in ("colors", "semantics"):
            a = getattr(self, name)
            if np.any((a < 0) | (a > 1)):
                raise MeshFormatError(f"{name} must lie in [0, 1]")

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.positions, self.normals, self.colors, self.semantics, self.faces, self.static):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def vertex_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals; isolated vertices get +z."""
    acc = np.zeros_like(positions, dtype=np.float64)
    if len(faces):
        a, b, c = (positions[faces[:, k]] for k in range(3))
        fn = np.cross(b - a, c - a)  # length is twice the face area
        for k in range(3):
            np.add.at(acc, faces[:, k], fn)
    lens = np.linalg.norm(acc, axis=1)
    out = np.tile([0.0, 0.0, 1.0], (len(positions), 1))
    ok = lens > 0
    out[ok] = acc[ok] / lens[ok, None]
    return out


# ----------------------------------------------------------------------
# ASCII PLY-like format

_REQUIRED = ("x", "y", "z", "r", "g", "b", "sr", "sg", "sb")
_NORMALS = ("nx", "ny", "nz")


def save_mesh(path, mesh: TriangleMesh) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        *(f"property double {p}" for p in ("x", "y", "z", "nx", "ny", "nz", "r", "g", "b", "sr", "sg", "sb")),
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    feats = mesh.features()
    lines.extend(" ".join(repr(float(x)) for x in row) for row in feats)
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.faces)
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, palette: SemanticPalette | None = None) -> TriangleMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise MeshFormatError("missing 'ply' magic", 1)
    n_vert = n_face = None
    props: list[str] = []
    current = None
    i = 1
    while True:
        if i >= len(text):
            raise MeshFormatError("unterminated header", i)
        tok = text[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "format"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "element" and len(tok) == 3:
            current = tok[1]
            try:
                count = int(tok[2])
            except ValueError:
                raise MeshFormatError(f"bad element count {tok[2]!r}", i) from None
            if current == "vertex":
                n_vert = count
            elif current == "face":
                n_face = count
            else:
                raise MeshFormatError(f"unknown element {current!r}", i)
        elif tok[0] == "property" and current == "vertex" and len(tok) == 3:
            props.append(tok[2])
        elif tok[0] == "property" and current == "face":
            continue
        else:
            raise MeshFormatError(f"malformed header line {text[i - 1]!r}", i)
    if n_vert is None:
        raise MeshFormatError("header declares no vertex element", i)
    n_face = n_face or 0
    missing = [p for p in _REQUIRED if p not in props]
    if missing:
        raise MeshFormatError(f"missing vertex properties {missing}", i)
    has_normals = all(p in props for p in _NORMALS)
    body = [(k + 1, ln) for k, ln in enumerate(text) if k >= i and ln.strip()]
    if len(body) != n_vert + n_face:
        raise MeshFormatError(f"header declares {n_vert} vertices and {n_face} faces but body has {len(body)} rows",
                              body[-1][0] if body else i)
    col = {p: k for k, p in enumerate(props)}
    data = np.empty((n_vert, len(props)))
    for row, (lineno, ln) in enumerate(body[:n_vert]):
        vals = ln.split()
        if len(vals) != len(props):
            raise MeshFormatError(f"expected {len(props)} values, got {len(vals)}", lineno)
        try:
            data[row] = [float(v) for v in vals]
        except ValueError:
            raise MeshFormatError("non-numeric vertex value", lineno) from None
        if not np.all(np.isfinite(data[row])):
            raise MeshFormatError("non-finite vertex value", lineno)
    faces = np.empty((n_face, 3), dtype=np.int64)
    for row, (lineno, ln) in enumerate(body[n_vert:]):
        vals = ln.split()
        if len(vals) != 4 or vals[0] != "3":
            raise MeshFormatError("faces must be triangles written as '3 i j k'", lineno)
        try:
            idx = [int(v) for v in vals[1:]]
        except ValueError:
            raise MeshFormatError("non-integer face index", lineno) from None
        if min(idx) < 0 or max(idx) >= n_vert:
            raise MeshFormatError(f"face index out of range 0..{n_vert - 1}", lineno)
        faces[row] = idx

    def cols(names):
        return data[:, [col[p] for p in names]]

    positions = cols(("x", "y", "z"))
    colors, semantics = cols(("r", "g", "b")), cols(("sr", "sg", "sb"))
    for name, arr in (("color", colors), ("semantic color", semantics)):
        bad = np.nonzero(np.any((arr < 0) | (arr > 1), axis=1))[0]
        if len(bad):
            raise MeshFormatError(f"{name} outside [0, 1]", body[bad[0]][0])
    normals = vertex_normals(positions, faces)
    if has_normals:
        given = cols(_NORMALS)
        lens = np.linalg.norm(given, axis=1)
        ok = lens > 0
        fix = ok & (np.abs(lens - 1.0) > 1e-6)
        given[fix] /= lens[fix, None]
        normals[ok] = given[ok]
    static = palette.static_mask(semantics) if palette is not None else None
    return TriangleMesh(positions, normals, colors, semantics, faces, static)


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationParams:
    center: np.ndarray
    scale: float

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.center


def normalization_of(positions: np.ndarray) -> NormalizationParams:
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    center = (lo + hi) / 2.0
    scale = float(np.abs(positions - center).max())
    return NormalizationParams(center, scale if scale > 0 else 1.0)


def normalize_mesh(mesh: TriangleMesh, params: NormalizationParams | None = None):
    """Center the bounding box at the origin and scale uniformly into [-1, 1].

    Passing ``params`` reuses the normalization of another (training) mesh.
    """
    if mesh.n_vertices == 0:
        raise ValueError("cannot normalize an empty mesh")
    params = params or normalization_of(mesh.positions)
    return mesh.with_positions(params.apply(mesh.positions)), params


def build_adjacency(faces: np.ndarray, n_vertices: int) -> list[np.ndarray]:
    """Sorted, deduplicated, self-loop-free neighbor lists from triangle edges."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    e = e[e[:, 0] != e[:, 1]]
    e = np.unique(e, axis=0)
    starts = np.searchsorted(e[:, 0], np.arange(n_vertices + 1))
    return [e[starts[i]:starts[i + 1], 1] for i in range(n_vertices)]


@dataclass(frozen=True)
class MeshGraph:
    """Edge lists over N(i) ∪ {i}, grouped by target vertex i."""

    n: int
    targets: np.ndarray
    sources: np.ndarray
    degree: np.ndarray

    @classmethod
    def from_adjacency(cls, adjacency: list[np.ndarray]) -> "MeshGraph":
        n = len(adjacency)
        tg, sc = [], []
        for i, nb in enumerate(adjacency):
            nbrs = np.concatenate([[i], nb]).astype(np.int64)
            tg.append(np.full(len(nbrs), i, dtype=np.int64))
            sc.append(nbrs)
        targets = np.concatenate(tg) if tg else np.zeros(0, np.int64)
        sources = np.concatenate(sc) if sc else np.zeros(0, np.int64)
        return cls(n, targets, sources, np.bincount(targets, minlength=n))

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh) -> "MeshGraph":
        return cls.from_adjacency(build_adjacency(mesh.faces, mesh.n_vertices))
