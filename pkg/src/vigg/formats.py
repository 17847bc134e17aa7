"""
vigg | Copyright (c) The vigg developers

Readers and writers for the on-disk formats: PLY clouds, VGF1 features,
VGM1 match lists, raw depth grids, camera JSON, truth and run manifests.
"""
import json
import typing as t
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, InvalidIntrinsics, InvalidTransform
from .features import FeatureSet
from .geometry import NORMAL_TOL, CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .lift import CameraIntrinsics, DepthImage, PixelMatch
from .utils import logger


PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
PLY_FORMATS = {"ascii", "binary_little_endian"}
COORDS = ("x", "y", "z")
NORMALS = ("nx", "ny", "nz")

VGF_MAGIC = b"VGF1"
VGF_HEADER = len(VGF_MAGIC) + 8

MATCHES_HEADER = "# vigg-matches v1 mode="
MATCH_MODES = ("pixel", "lifted")

DEFAULT_DEPTH_SCALE = 1000.0


def _fmt(value: float) -> str:
    return repr(float(value))


# PLY


@dataclass
class _Element:
    name: str
    count: int
    props: list[tuple[str, str]] = field(default_factory=list)
    has_list: bool = False

    @property
    def dtype(self) -> np.dtype:
        return np.dtype([(name, "<" + kind) for name, kind in self.props])


def _parse_ply_header(path: Path, data: bytes) -> tuple[str, list[_Element], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"[{path}:1] not a PLY file")
    body = data.find(b"\n", end)
    body = len(data) if body < 0 else body + 1
    try:
        lines = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as err:
        raise FormatError(f"[{path}] PLY header is not ASCII (offset {err.start})") from err

    fmt = ""
    elements: list[_Element] = []
    for lineno, line in enumerate(lines[1:], start=2):
        words = line.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            fmt = words[1] if len(words) > 1 else ""
            if fmt not in PLY_FORMATS:
                raise FormatError(f"[{path}:{lineno}] unsupported PLY format `{fmt}`")
        elif words[0] == "element" and len(words) == 3:
            try:
                elements.append(_Element(words[1], int(words[2])))
            except ValueError as err:
                raise FormatError(f"[{path}:{lineno}] invalid element count `{words[2]}`") from err
        elif words[0] == "property" and elements:
            element = elements[-1]
            if len(words) >= 2 and words[1] == "list":
                element.has_list = True
                element.props.append((words[-1], "list"))
            elif len(words) == 3 and words[1] in PLY_TYPES:
                element.props.append((words[2], PLY_TYPES[words[1]]))
            else:
                raise FormatError(
                    f"[{path}:{lineno}] invalid property in element `{element.name}`: {line!r}"
                )
        else:
            raise FormatError(f"[{path}:{lineno}] unexpected PLY header line {line!r}")

    if not fmt:
        raise FormatError(f"[{path}] PLY header has no format line")
    return fmt, elements, body


def _vertex_columns(path: Path, element: _Element) -> tuple[bool, list[str]]:
    kinds = dict(element.props)
    for name in COORDS:
        if kinds.get(name) not in ("f4", "f8"):
            raise FormatError(
                f"[{path}] element `vertex` needs float x/y/z properties, "
                f"got {name}: {kinds.get(name, 'missing')}"
            )
    with_normals = all(kinds.get(name) in ("f4", "f8") for name in NORMALS)
    names = [name for name, _ in element.props]
    return with_normals, names


def _normals(path: Path, values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1)
    if len(norms) and (norms == 0).any():
        raise FormatError(f"[{path}] element `vertex` has zero-length normals")
    if len(norms) and np.abs(norms - 1.0).max() > NORMAL_TOL:
        values = values / norms[:, None]
    return values


def read_ply(path: "str | Path") -> PointCloud:
    """
    Reads the `vertex` element of an ascii or binary little-endian PLY file.
    Normals are loaded when nx/ny/nz are present.
    """
    path = Path(path)
    data = path.read_bytes()
    fmt, elements, offset = _parse_ply_header(path, data)

    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise FormatError(f"[{path}] no `vertex` element")
    if vertex.has_list:
        raise FormatError(f"[{path}] element `vertex` has a list property")
    with_normals, names = _vertex_columns(path, vertex)

    if fmt == "ascii":
        table = _read_ascii_vertices(path, data, offset, elements, vertex, names)
    else:
        table = _read_binary_vertices(path, data, offset, elements, vertex)

    points = np.stack([table[name] for name in COORDS], axis=1).astype(np.float64)
    normals = None
    if with_normals:
        normals = _normals(path, np.stack([table[n] for n in NORMALS], axis=1).astype(np.float64))
    if not np.isfinite(points).all():
        raise FormatError(f"[{path}] element `vertex` has non-finite coordinates")
    logger.debug("read %s: %d points (%s)", path, len(points), fmt)
    return PointCloud(points, normals)


def _read_ascii_vertices(
    path: Path, data: bytes, offset: int, elements: list[_Element], vertex: _Element, names: list[str]
) -> dict[str, np.ndarray]:
    header_lines = data[:offset].count(b"\n")
    lines = data[offset:].decode("ascii", errors="replace").splitlines()
    skip = 0
    for element in elements:
        if element is vertex:
            break
        skip += element.count

    rows = lines[skip:skip + vertex.count]
    if len(rows) < vertex.count:
        raise FormatError(
            f"[{path}:{header_lines + len(lines) + 1}] element `vertex` declares "
            f"{vertex.count} rows, found {len(rows)}"
        )
    table = np.empty((vertex.count, len(names)))
    for i, row in enumerate(rows):
        lineno = header_lines + skip + i + 1
        words = row.split()
        if len(words) != len(names):
            raise FormatError(
                f"[{path}:{lineno}] element `vertex` expects {len(names)} values, got {len(words)}"
            )
        try:
            table[i] = [float(w) for w in words]
        except ValueError as err:
            raise FormatError(f"[{path}:{lineno}] element `vertex`: {err}") from err
    return {name: table[:, i] for i, name in enumerate(names)}


def _read_binary_vertices(
    path: Path, data: bytes, offset: int, elements: list[_Element], vertex: _Element
) -> np.ndarray:
    for element in elements:
        if element is vertex:
            break
        if element.has_list:
            raise FormatError(
                f"[{path}] element `{element.name}` with list properties precedes `vertex`"
            )
        offset += element.count * element.dtype.itemsize

    dtype = vertex.dtype
    need = vertex.count * dtype.itemsize
    if offset + need > len(data):
        raise FormatError(
            f"[{path}] element `vertex` truncated at byte offset {len(data)} "
            f"(needs {offset + need})"
        )
    return np.frombuffer(data, dtype=dtype, count=vertex.count, offset=offset)


def write_ply(path: "str | Path", cloud: PointCloud, *, binary: bool = True) -> None:
    """
    Writes double-precision x/y/z (and nx/ny/nz when the cloud has normals).
    """
    path = Path(path)
    names = list(COORDS) + (list(NORMALS) if cloud.has_normals else [])
    columns = [cloud.points] + ([cloud.normals] if cloud.normals is not None else [])
    values = np.concatenate(columns, axis=1) if len(cloud) else np.empty((0, len(names)))

    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        "comment vigg",
        f"element vertex {len(cloud)}",
        *(f"property double {name}" for name in names),
        "end_header",
    ]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        body = np.ascontiguousarray(values, dtype="<f8").tobytes()
    else:
        body = "".join(
            " ".join(_fmt(v) for v in row) + "\n" for row in values.tolist()
        ).encode("ascii")
    path.write_bytes(head + body)


# VGF1 features


def read_features(path: "str | Path") -> FeatureSet:
    path = Path(path)
    data = path.read_bytes()
    if data[:len(VGF_MAGIC)] != VGF_MAGIC:
        raise FormatError(f"[{path}] bad magic at offset 0, expected {VGF_MAGIC!r}")
    if len(data) < VGF_HEADER:
        raise FormatError(f"[{path}] truncated header at offset {len(data)}")
    count, dim = (int(v) for v in np.frombuffer(data, dtype="<u4", count=2, offset=len(VGF_MAGIC)))
    if dim < 1:
        raise FormatError(f"[{path}] dimension must be positive at offset 8, got {dim}")
    need = VGF_HEADER + 4 * count * dim
    if len(data) != need:
        raise FormatError(
            f"[{path}] expected {need} bytes for {count}x{dim} features, got {len(data)}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=VGF_HEADER)
    return FeatureSet(vectors.reshape(count, dim))


def write_features(path: "str | Path", features: FeatureSet) -> None:
    header = VGF_MAGIC + np.array([len(features), features.dim], dtype="<u4").tobytes()
    Path(path).write_bytes(header + np.ascontiguousarray(features.vectors, dtype="<f4").tobytes())


# VGM1 matches


@dataclass(frozen=True, eq=False)
class MatchFile:
    """
    Contents of a match file: pixel matches, or lifted 3D correspondences
    (weight = score).
    """

    mode: str
    pixels: tuple[PixelMatch, ...] = ()
    lifted: CorrespondenceSet | None = None

    def __len__(self) -> int:
        return len(self.lifted) if self.lifted is not None else len(self.pixels)


def read_matches(path: "str | Path") -> MatchFile:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(MATCHES_HEADER):
        raise FormatError(f"[{path}:1] missing `{MATCHES_HEADER}<mode>` header")
    mode = lines[0][len(MATCHES_HEADER):].strip()
    if mode not in MATCH_MODES:
        raise FormatError(f"[{path}:1] unknown match mode `{mode}`")
    width = 5 if mode == "pixel" else 7

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words = line.split()
        if len(words) != width:
            raise FormatError(f"[{path}:{lineno}] expected {width} values, got {len(words)}")
        try:
            rows.append([float(w) for w in words])
        except ValueError as err:
            raise FormatError(f"[{path}:{lineno}] {err}") from err

    table = np.array(rows, dtype=np.float64).reshape(-1, width)
    if mode == "pixel":
        return MatchFile(mode, pixels=tuple(PixelMatch(*row) for row in table.tolist()))
    if not np.isfinite(table).all() or (table[:, 6] < 0).any():
        raise FormatError(f"[{path}] lifted matches need finite points and non-negative scores")
    lifted = CorrespondenceSet.from_arrays(
        table[:, 0:3], table[:, 3:6], table[:, 6], provenance=Provenance.VISUAL
    )
    return MatchFile(mode, lifted=lifted)


def write_matches(
    path: "str | Path", matches: "CorrespondenceSet | t.Sequence[PixelMatch]"
) -> None:
    if isinstance(matches, CorrespondenceSet):
        mode = "lifted"
        table = np.concatenate([matches.src, matches.dst, matches.weights[:, None]], axis=1)
        rows = table.tolist()
    else:
        mode = "pixel"
        rows = [[m.u1, m.v1, m.u2, m.v2, m.score] for m in matches]
    text = MATCHES_HEADER + mode + "\n"
    text += "".join(" ".join(_fmt(v) for v in row) + "\n" for row in rows)
    Path(path).write_text(text)


# Depth grids


def read_depth(path: "str | Path") -> DepthImage:
    """
    `width height scale` ASCII line, then `height` rows of `width` u16
    little-endian values; depth in meters is `value / scale`, 0 is invalid.
    """
    path = Path(path)
    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError(f"[{path}:1] missing `width height scale` header")
    words = data[:newline].split()
    try:
        width, height = int(words[0]), int(words[1])
        scale = float(words[2]) if len(words) > 2 else DEFAULT_DEPTH_SCALE
    except (IndexError, ValueError) as err:
        raise FormatError(f"[{path}:1] invalid depth header {data[:newline]!r}") from err
    if width < 1 or height < 1 or not scale > 0:
        raise FormatError(f"[{path}:1] invalid depth header {data[:newline]!r}")

    offset = newline + 1
    need = offset + 2 * width * height
    if len(data) != need:
        raise FormatError(f"[{path}] expected {need} bytes for a {width}x{height} grid, got {len(data)}")
    raw = np.frombuffer(data, dtype="<u2", count=width * height, offset=offset)
    return DepthImage(raw.reshape(height, width).astype(np.float64) / scale)


def write_depth(path: "str | Path", image: DepthImage, *, scale: float = DEFAULT_DEPTH_SCALE) -> None:
    depth = np.nan_to_num(image.depth, nan=0.0)
    raw = np.rint(np.clip(depth, 0.0, None) * scale)
    if raw.max(initial=0) > np.iinfo(np.uint16).max:
        raise FormatError(f"[{path}] depth exceeds the 16-bit range at scale {scale}")
    head = f"{image.width} {image.height} {_fmt(scale)}\n".encode("ascii")
    Path(path).write_bytes(head + raw.astype("<u2").tobytes())


# JSON documents


def _load_json(path: Path) -> t.Any:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"[{path}:{err.lineno}] invalid JSON: {err.msg}") from err


def _transform(path: Path, value: t.Any, key: str) -> RigidTransform:
    try:
        return RigidTransform.from_matrix(value)
    except (InvalidTransform, ValueError, TypeError) as err:
        raise FormatError(f"[{path}] `{key}` is not a rigid 4x4 matrix: {err}") from err


def read_intrinsics(path: "str | Path") -> tuple[CameraIntrinsics, RigidTransform | None]:
    """
    `{fx, fy, cx, cy, width, height, extrinsic?}`; the extrinsic maps cloud
    coordinates to the camera frame.
    """
    path = Path(path)
    data = _load_json(path)
    try:
        k = CameraIntrinsics(
            fx=float(data["fx"]), fy=float(data["fy"]),
            cx=float(data["cx"]), cy=float(data["cy"]),
            width=int(data["width"]), height=int(data["height"]),
        )
    except KeyError as err:
        raise FormatError(f"[{path}] missing camera field {err}") from err
    except (InvalidIntrinsics, TypeError, ValueError) as err:
        raise FormatError(f"[{path}] {err}") from err
    extrinsic = data.get("extrinsic")
    return k, None if extrinsic is None else _transform(path, extrinsic, "extrinsic")


def write_intrinsics(
    path: "str | Path", k: CameraIntrinsics, extrinsic: RigidTransform | None = None
) -> None:
    data: dict[str, t.Any] = {
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height,
    }
    if extrinsic is not None:
        data["extrinsic"] = extrinsic.as_list()
    write_json(path, data)


def read_truth(path: "str | Path") -> tuple[RigidTransform, dict[str, t.Any]]:
    path = Path(path)
    data = _load_json(path)
    if not isinstance(data, dict) or "transform" not in data:
        raise FormatError(f"[{path}] truth file needs a `transform` entry")
    return _transform(path, data["transform"], "transform"), data.get("spec") or {}


def write_truth(
    path: "str | Path", transform: RigidTransform, spec: dict[str, t.Any] | None = None
) -> None:
    write_json(path, {"transform": transform.as_list(), "spec": spec or {}})


def dump_json(data: t.Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(path: "str | Path", data: t.Any) -> None:
    Path(path).write_text(dump_json(data))


# Run manifests


PAIR_FILES = (
    "cloud_p", "cloud_q", "matches", "features_p", "features_q",
    "intrinsics", "intrinsics_q", "depth_p", "depth_q", "truth",
)


@dataclass(frozen=True)
class PairEntry:
    """
    Files of one registration pair. Pixel-mode matches are lifted through
    `depth_p`/`depth_q` when given, otherwise by projecting the clouds with
    the camera (and extrinsic) of `intrinsics` (`intrinsics_q` for Q when
    the cameras differ).
    """

    name: str
    cloud_p: Path
    cloud_q: Path
    matches: Path
    features_p: Path | None = None
    features_q: Path | None = None
    intrinsics: Path | None = None
    intrinsics_q: Path | None = None
    depth_p: Path | None = None
    depth_q: Path | None = None
    truth: Path | None = None

    @classmethod
    def from_dict(cls, data: dict[str, t.Any], base: Path, name: str) -> "PairEntry":
        unknown = sorted(set(data) - set(PAIR_FILES) - {"name"})
        if unknown:
            raise FormatError(f"pair `{name}` has unknown keys: {', '.join(unknown)}")
        missing = [key for key in ("cloud_p", "cloud_q", "matches") if not data.get(key)]
        if missing:
            raise FormatError(f"pair `{name}` is missing {', '.join(missing)}")
        paths = {key: base / data[key] for key in PAIR_FILES if data.get(key)}
        return cls(name=str(data.get("name", name)), **paths)

    @classmethod
    def from_bundle(cls, folder: "str | Path") -> "PairEntry":
        """
        A scene bundle directory as written by `vigg gen-scene`.
        """
        folder = Path(folder)
        truth = folder / "truth.json"
        return cls(
            name=folder.name,
            cloud_p=folder / "cloud_p.ply",
            cloud_q=folder / "cloud_q.ply",
            matches=folder / "matches.vgm",
            features_p=folder / "features_p.vgf",
            features_q=folder / "features_q.vgf",
            truth=truth if truth.exists() else None,
        )


@dataclass(frozen=True)
class RunManifest:
    pairs: tuple[PairEntry, ...]
    config: dict[str, t.Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: "str | Path") -> "RunManifest":
        """
        `{"pairs": [{cloud_p, cloud_q, matches, ...}], "config": {...}}`.
        Relative paths are resolved against the manifest's folder.
        """
        path = Path(path)
        data = _load_json(path)
        if not isinstance(data, dict) or not isinstance(data.get("pairs"), list):
            raise FormatError(f"[{path}] a manifest needs a `pairs` list")
        config = data.get("config") or {}
        if not isinstance(config, dict):
            raise FormatError(f"[{path}] `config` must be an object")
        try:
            pairs = tuple(
                PairEntry.from_dict(entry, path.parent, f"pair-{i:03d}")
                for i, entry in enumerate(data["pairs"])
            )
        except FormatError as err:
            raise FormatError(f"[{path}] {err}") from err
        except (TypeError, AttributeError) as err:
            raise FormatError(f"[{path}] invalid pair entry: {err}") from err
        return cls(pairs, config)
