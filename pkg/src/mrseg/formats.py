"""PLY (ascii / binary_little_endian) and whitespace-separated text I/O."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cloud import UNLABELED, PointCloud


class PlyError(ValueError):
    pass


class BigEndianPlyError(PlyError):
    """binary_big_endian files are not supported."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_WRITE_NAMES = {"u1": "uchar", "u2": "ushort", "u4": "uint", "f4": "float", "f8": "double"}

LABEL_NAMES = ("label", "class")
COLOR_NAMES = ("red", "green", "blue")


@dataclass
class PlyElement:
    name: str
    count: int
    # (name, dtype code) for scalars, (name, count code, item code) for lists
    properties: list[tuple] = field(default_factory=list)

    @property
    def has_lists(self) -> bool:
        return any(len(p) == 3 for p in self.properties)

    def dtype(self, endian: str) -> np.dtype:
        return np.dtype([(p[0], endian + p[1]) for p in self.properties])


@dataclass
class PlyHeader:
    format: str
    elements: list[PlyElement]
    length: int  # header size in bytes

    @property
    def vertex(self) -> PlyElement:
        for el in self.elements:
            if el.name == "vertex":
                return el
        raise PlyError("no vertex element")


def parse_header(data: bytes) -> PlyHeader:
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic")
    end = data.find(b"end_header")
    if end < 0:
        raise PlyError("header is not terminated by end_header")
    nl = data.find(b"\n", end)
    length = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()[1:]
    fmt = None
    elements: list[PlyElement] = []
    for raw in lines:
        parts = raw.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        key = parts[0]
        if key == "format":
            if len(parts) < 2:
                raise PlyError("malformed format line")
            fmt = parts[1]
            if fmt == "binary_big_endian":
                raise BigEndianPlyError("binary_big_endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unknown PLY format {fmt!r}")
        elif key == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise PlyError(f"malformed element line: {raw!r}")
            elements.append(PlyElement(parts[1], int(parts[2])))
        elif key == "property":
            if not elements:
                raise PlyError("property declared before any element")
            if len(parts) == 5 and parts[1] == "list":
                if parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise PlyError(f"unknown list property type in {raw!r}")
                elements[-1].properties.append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1].properties.append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise PlyError(f"malformed property line: {raw!r}")
        else:
            raise PlyError(f"unexpected header line: {raw!r}")
    if fmt is None:
        raise PlyError("missing format line")
    header = PlyHeader(fmt, elements, length)
    names = [p[0] for p in header.vertex.properties]
    for axis in "xyz":
        if axis not in names:
            raise PlyError(f"vertex element lacks property {axis!r}")
    if header.vertex.has_lists:
        raise PlyError("list properties on vertices are not supported")
    return header


def _skip_binary_lists(data: bytes, pos: int, el: PlyElement) -> int:
    for _ in range(el.count):
        for prop in el.properties:
            if len(prop) == 2:
                pos += np.dtype(prop[1]).itemsize
            else:
                cdt = np.dtype("<" + prop[1])
                if pos + cdt.itemsize > len(data):
                    raise PlyError("body truncated")
                n = int(np.frombuffer(data, cdt, 1, pos)[0])
                pos += cdt.itemsize + n * np.dtype(prop[2]).itemsize
    if pos > len(data):
        raise PlyError("body truncated")
    return pos


def _vertex_table(data: bytes, header: PlyHeader) -> np.ndarray:
    body = data[header.length:]
    if header.format == "binary_little_endian":
        pos = 0
        table = None
        for el in header.elements:
            if el.has_lists:
                pos = _skip_binary_lists(body, pos, el)
                continue
            dt = el.dtype("<")
            size = dt.itemsize * el.count
            if pos + size > len(body):
                raise PlyError(f"body truncated in element {el.name!r}")
            if el.name == "vertex":
                table = np.frombuffer(body, dt, el.count, pos)
            pos += size
        if pos != len(body):
            raise PlyError(f"{len(body) - pos} trailing bytes after the last element")
        return table

    lines = body.decode("ascii", errors="replace").splitlines()
    lines = [ln for ln in lines if ln.strip()]
    cursor = 0
    table = None
    for el in header.elements:
        chunk = lines[cursor:cursor + el.count]
        if len(chunk) < el.count:
            raise PlyError(f"body truncated in element {el.name!r}")
        cursor += el.count
        if el.name != "vertex":
            continue
        dt = el.dtype("=")
        width = len(el.properties)
        tokens = " ".join(chunk).split()
        if len(tokens) != width * el.count:
            raise PlyError("vertex rows do not match the declared properties")
        try:
            values = np.array(tokens, dtype=np.float64).reshape(el.count, width)
        except ValueError as exc:
            raise PlyError(f"bad vertex value: {exc}") from None
        table = np.empty(el.count, dtype=dt)
        for j, prop in enumerate(el.properties):
            table[prop[0]] = values[:, j]
    if cursor != len(lines):
        raise PlyError(f"{len(lines) - cursor} unexpected lines after the last element")
    return table


def _decode_labels(col: np.ndarray) -> np.ndarray:
    lab = col.astype(np.int64)
    if col.dtype.kind == "u":
        lab[col == np.iinfo(col.dtype).max] = UNLABELED
    elif col.dtype.kind == "i":
        lab[lab < 0] = UNLABELED
    else:
        if not np.all(np.isfinite(col)) or np.any(col != np.round(col)):
            raise PlyError("non-integer label values")
        lab[lab < 0] = UNLABELED
    return lab


def read_ply(data: bytes) -> PointCloud:
    header = parse_header(data)
    table = _vertex_table(data, header)
    names = table.dtype.names
    pos = np.stack([table[a].astype(np.float64) for a in "xyz"], axis=1)
    if not np.all(np.isfinite(pos)):
        raise PlyError("non-finite coordinate")
    colors = None
    if all(c in names for c in COLOR_NAMES):
        colors = np.stack([table[c] for c in COLOR_NAMES], axis=1)
        if colors.size and (colors.min() < 0 or colors.max() > 255):
            raise PlyError("color values outside 0..255")
        colors = colors.astype(np.uint8)
    labels = None
    for name in LABEL_NAMES:
        if name in names:
            labels = _decode_labels(table[name])
            break
    intensity = table["intensity"].astype(np.float64) if "intensity" in names else None
    return PointCloud(pos, colors=colors, labels=labels, intensity=intensity)


def label_dtype(labels: np.ndarray) -> str:
    """Smallest unsigned code whose max value (reserved for UNLABELED) exceeds every id."""
    top = int(labels.max()) if labels.size else 0
    for code in ("u1", "u2", "u4"):
        if top < np.iinfo(code).max:
            return code
    raise ValueError("label ids too large for a PLY uint")


def write_ply(cloud: PointCloud, format: str = "binary_little_endian") -> bytes:
    if format not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {format!r}")
    n = len(cloud)
    fields: list[tuple[str, str, np.ndarray]] = [
        (a, "f8", cloud.positions[:, i]) for i, a in enumerate("xyz")
    ]
    if cloud.colors is not None:
        fields += [(c, "u1", cloud.colors[:, i]) for i, c in enumerate(COLOR_NAMES)]
    if cloud.intensity is not None:
        fields.append(("intensity", "f8", cloud.intensity))
    if cloud.labels is not None:
        code = label_dtype(cloud.labels)
        enc = cloud.labels.copy()
        enc[enc == UNLABELED] = np.iinfo(code).max
        fields.append(("label", code, enc))
    head = ["ply", f"format {format} 1.0", f"element vertex {n}"]
    head += [f"property {_WRITE_NAMES[code]} {name}" for name, code, _ in fields]
    head.append("end_header")
    out = ("\n".join(head) + "\n").encode("ascii")
    if format == "binary_little_endian":
        table = np.empty(n, dtype=[(name, "<" + code) for name, code, _ in fields])
        for name, _, col in fields:
            table[name] = col
        return out + table.tobytes()
    cols = [[repr(float(v)) for v in col] if code[0] == "f" else [str(int(v)) for v in col]
            for _, code, col in fields]
    rows = (" ".join(cells) for cells in zip(*cols))
    return out + "".join(r + "\n" for r in rows).encode("ascii")


# -- whitespace-separated text -------------------------------------------------

def write_table(columns: dict[str, np.ndarray], integer: Sequence[str] = ()) -> str:
    """One row per point, preceded by a ``# name name ...`` header line."""
    names = list(columns)
    buf = io.StringIO()
    buf.write("# " + " ".join(names) + "\n")
    if not names:
        return buf.getvalue()
    cols = []
    for name in names:
        col = np.asarray(columns[name])
        if name in integer:
            cols.append([str(int(v)) for v in col])
        else:
            cols.append([repr(float(v)) for v in col])
    for cells in zip(*cols):
        buf.write(" ".join(cells) + "\n")
    return buf.getvalue()


def read_table(text: str) -> tuple[list[str], np.ndarray]:
    lines = text.splitlines()
    names: Optional[list[str]] = None
    rows = []
    for ln in lines:
        s = ln.strip()
        if not s:
            continue
        if s.startswith("#"):
            if names is None and not rows:
                names = s[1:].split()
            continue
        rows.append(s)
    tokens = " ".join(rows).split()
    width = len(names) if names else (len(rows[0].split()) if rows else 0)
    if width == 0:
        return names or [], np.empty((0, 0))
    if len(tokens) != width * len(rows):
        raise ValueError("ragged table: rows do not all have the declared number of columns")
    values = np.array(tokens, dtype=np.float64).reshape(len(rows), width)
    return names or _default_columns(width), values


def _default_columns(width: int) -> list[str]:
    return {
        3: ["x", "y", "z"],
        4: ["x", "y", "z", "label"],
        6: ["x", "y", "z", "r", "g", "b"],
        7: ["x", "y", "z", "r", "g", "b", "label"],
    }.get(width) or [f"c{i}" for i in range(width)]


def write_text_cloud(cloud: PointCloud) -> str:
    cols: dict[str, np.ndarray] = {a: cloud.positions[:, i] for i, a in enumerate("xyz")}
    ints = ["label", "r", "g", "b"]
    if cloud.colors is not None:
        cols.update({c: cloud.colors[:, i] for i, c in enumerate("rgb")})
    if cloud.labels is not None:
        cols["label"] = cloud.labels
    return write_table(cols, integer=ints)


def read_text_cloud(text: str) -> PointCloud:
    names, values = read_table(text)
    if not all(a in names for a in "xyz"):
        raise ValueError("text cloud needs x, y and z columns")
    col = {n: values[:, i] for i, n in enumerate(names)}
    n = len(values)
    pos = np.stack([col[a] for a in "xyz"], axis=1) if n else np.empty((0, 3))
    colors = np.stack([col[c] for c in "rgb"], axis=1) if all(c in col for c in "rgb") else None
    labels = col["label"].astype(np.int64) if "label" in col else None
    return PointCloud(pos, colors=colors, labels=labels)


def read_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_ply(path.read_bytes())
    return read_text_cloud(path.read_text())


def write_cloud(cloud: PointCloud, path: str | Path, format: str = "binary_little_endian") -> None:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        path.write_bytes(write_ply(cloud, format))
    else:
        path.write_text(write_text_cloud(cloud))


def write_labels(labels: np.ndarray) -> str:
    return "".join(f"{int(v)}\n" for v in labels)


def read_labels(text: str) -> np.ndarray:
    vals = [ln.split()[0] for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        return np.array([int(v) for v in vals], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"bad label file entry: {exc}") from None
