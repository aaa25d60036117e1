"""Dataset ingestion, synthetic geometry generators, and model/code files.

File formats owned here:

- IDX image/label containers (big-endian, magic 0x803 / 0x801); gzip-compressed
  files are detected by content and decompressed transparently.
- Delimited text matrices (rows are feature dimensions, columns are samples)
  and a raw little-endian float64 format with a (rows, cols) header.
- "FHSH01" binary model container and "FHCD01" packed-codes file, both with a
  trailing CRC32; round-trips are bit-exact.
"""

from __future__ import annotations

import gzip
import json
import struct
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataFormatError, InvalidInputError
from .lowrank import KernelConfig, OptimizerConfig, Transform
from .network import DenseLayer, DenseNet, NetConfig
from .dictionaries import SplitConfig, SplitNode
from .forest import Forest, ForestConfig, HashTree, LabeledDataset
from .aggregation import SelectionResult
from .retrieval import PackedCodes, _words_for

MODEL_MAGIC = b"FHSH01"
CODES_MAGIC = b"FHCD01"

_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801

_LEARNER_CODES = {"linear": 0, "kernel": 1, "neural": 2}
_LEARNER_NAMES = {v: k for k, v in _LEARNER_CODES.items()}
_KERNEL_CODES = {None: 0, "rbf": 1, "polynomial": 2}
_ACT_CODES = {"relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


# ---------------------------------------------------------------------------
# IDX and matrix loaders

def _read_file(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path):
    """Load an IDX container: images become a (pixels, N) matrix scaled to
    [0, 1]; labels become an int array."""
    raw = _read_file(path)
    if len(raw) < 8:
        raise DataFormatError("IDX file too short for a header", offset=len(raw))
    magic = struct.unpack(">I", raw[0:4])[0]
    if magic == _IDX_LABELS:
        (count,) = struct.unpack(">I", raw[4:8])
        if len(raw) < 8 + count:
            raise DataFormatError(
                f"label payload truncated: expected {count} bytes", offset=len(raw)
            )
        return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if magic == _IDX_IMAGES:
        if len(raw) < 16:
            raise DataFormatError("image header truncated", offset=len(raw))
        count, rows, cols = struct.unpack(">III", raw[4:16])
        need = count * rows * cols
        if len(raw) < 16 + need:
            raise DataFormatError(
                f"image payload truncated: expected {need} bytes", offset=len(raw)
            )
        pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=16)
        images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
        return images.T.copy()
    raise DataFormatError(f"unsupported IDX magic 0x{magic:08x}", offset=0)


def load_matrix(path, fmt: str = "csv") -> np.ndarray:
    """Load a feature matrix (rows are dimensions, columns are samples)."""
    if fmt == "csv":
        return _load_csv(path)
    if fmt in ("raw-f64", "raw"):
        return _load_raw_f64(path)
    raise InvalidInputError(f"unknown matrix format {fmt!r}")


def _load_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    rows = [ln for ln in lines if ln]
    if not rows:
        raise DataFormatError("csv file is empty")
    parsed = []
    start = 0
    try:
        parsed.append([float(tok) for tok in rows[0].split(",")])
        start = 1
    except ValueError:
        start = 1  # header row
    for i, ln in enumerate(rows[start:], start=start):
        try:
            parsed.append([float(tok) for tok in ln.split(",")])
        except ValueError as exc:
            raise DataFormatError(f"non-numeric cell in csv row {i + 1}: {exc}") from exc
    width = len(parsed[0]) if parsed else 0
    if width == 0:
        raise DataFormatError("csv file has no numeric rows")
    for i, row in enumerate(parsed):
        if len(row) != width:
            raise DataFormatError(
                f"ragged csv: row {i + 1} has {len(row)} cells, expected {width}"
            )
    return np.asarray(parsed, dtype=np.float64)


def _load_raw_f64(path) -> np.ndarray:
    raw = _read_file(path)
    if len(raw) < 16:
        raise DataFormatError("raw-f64 header truncated", offset=len(raw))
    rows, cols = struct.unpack("<QQ", raw[:16])
    need = 16 + rows * cols * 8
    if len(raw) != need:
        raise DataFormatError(
            f"raw-f64 payload is {len(raw)} bytes, expected {need}", offset=len(raw)
        )
    return np.frombuffer(raw, dtype="<f8", offset=16).reshape(rows, cols).copy()


def save_matrix(matrix, path, fmt: str = "csv"):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidInputError("matrix must be 2-D")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in matrix:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif fmt in ("raw-f64", "raw"):
        with open(path, "wb") as fh:
            fh.write(struct.pack("<QQ", *matrix.shape))
            fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    else:
        raise InvalidInputError(f"unknown matrix format {fmt!r}")


def load_labels(path) -> np.ndarray:
    """Labels from an IDX label file or a plain text file of integers."""
    raw = _read_file(path)
    if len(raw) >= 4 and struct.unpack(">I", raw[:4])[0] == _IDX_LABELS:
        return load_idx(path)
    try:
        return np.asarray([int(tok) for tok in raw.decode("utf-8").split()], dtype=np.int64)
    except (UnicodeDecodeError, ValueError) as exc:
        raise DataFormatError(f"cannot parse labels: {exc}") from exc


def save_labels(labels, path):
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(str(int(v)) for v in labels) + "\n")


# ---------------------------------------------------------------------------
# Synthetic geometries

@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for the toy two-class geometries.

    kinds: "subspaces" (random low-dimensional class subspaces in the ambient
    space), "lines2d" (four rays in the plane, two per class), "circles2d"
    (concentric circles, class c at radius c+1).
    """

    kind: str
    class_count: int = 2
    ambient_dim: int = 10
    intrinsic_dim: int = 2
    noise: float = 0.0
    samples_per_class: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("subspaces", "lines2d", "circles2d"):
            raise InvalidInputError(f"unknown synthetic kind {self.kind!r}")
        if self.noise < 0:
            raise InvalidInputError("noise must be >= 0")
        if self.class_count < 1 or self.samples_per_class < 1:
            raise InvalidInputError("class_count and samples_per_class must be >= 1")
        if self.kind == "subspaces" and self.intrinsic_dim > self.ambient_dim:
            raise InvalidInputError("intrinsic_dim cannot exceed ambient_dim")
        if self.kind in ("lines2d", "circles2d") and self.ambient_dim != 2:
            raise InvalidInputError(f"{self.kind} requires ambient_dim=2")
        if self.kind == "lines2d" and self.class_count != 2:
            raise InvalidInputError("lines2d is a two-class geometry")


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Deterministic synthetic dataset; labels are emitted grouped by class
    (all class-0 columns first), so two generators with equal class counts
    stay sample-aligned."""
    rng = np.random.default_rng(spec.seed)
    per_class = []
    for c in range(spec.class_count):
        if spec.kind == "subspaces":
            basis = np.linalg.qr(
                rng.normal(size=(spec.ambient_dim, spec.intrinsic_dim))
            )[0]
            coeffs = rng.normal(size=(spec.intrinsic_dim, spec.samples_per_class))
            pts = basis @ coeffs
        elif spec.kind == "lines2d":
            angles = np.deg2rad([0.0, 30.0] if c == 0 else [90.0, 120.0])
            ray = rng.integers(0, 2, size=spec.samples_per_class)
            t = rng.uniform(0.2, 1.0, size=spec.samples_per_class)
            theta = angles[ray]
            pts = np.vstack([t * np.cos(theta), t * np.sin(theta)])
        else:  # circles2d: concentric circles with radial noise only
            radius = float(c + 1)
            theta = rng.uniform(0.0, 2.0 * np.pi, size=spec.samples_per_class)
            r = radius + spec.noise * rng.normal(size=spec.samples_per_class)
            pts = np.vstack([r * np.cos(theta), r * np.sin(theta)])
        if spec.kind != "circles2d" and spec.noise > 0:
            pts = pts + spec.noise * rng.normal(size=pts.shape)
        per_class.append(pts)
    features = np.concatenate(per_class, axis=1)
    labels = np.repeat(np.arange(spec.class_count), spec.samples_per_class)
    return LabeledDataset(features=features, labels=labels)


# ---------------------------------------------------------------------------
# Binary container plumbing

class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v):
        self.buf += struct.pack("<B", v)

    def u32(self, v):
        self.buf += struct.pack("<I", v)

    def u64(self, v):
        self.buf += struct.pack("<Q", v)

    def i64(self, v):
        self.buf += struct.pack("<q", v)

    def f64(self, v):
        self.buf += struct.pack("<d", v)

    def string(self, s):
        enc = s.encode("utf-8")
        self.u32(len(enc))
        self.buf += enc

    def array(self, a):
        a = np.ascontiguousarray(a, dtype="<f8")
        self.u8(a.ndim)
        for d in a.shape:
            self.u64(d)
        self.buf += a.tobytes()


class _Reader:
    def __init__(self, buf, base_offset=0):
        self.buf = buf
        self.pos = 0
        self.base = base_offset

    def _take(self, n):
        if self.pos + n > len(self.buf):
            raise DataFormatError(
                "container truncated mid-record", offset=self.base + self.pos
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self):
        return struct.unpack("<q", self._take(8))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def string(self):
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self):
        ndim = self.u8()
        shape = tuple(self.u64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(count * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise DataFormatError(
                f"{len(self.buf) - self.pos} trailing bytes", offset=self.base + self.pos
            )


def _checked_payload(raw, magic, kind):
    if len(raw) < len(magic) + 4:
        raise DataFormatError(f"{kind} file too short", offset=len(raw))
    if raw[:4] != magic[:4]:
        raise DataFormatError(f"not a {kind} file (bad magic)", offset=0)
    if raw[: len(magic)] != magic:
        version = raw[4 : len(magic)].decode("ascii", errors="replace")
        raise DataFormatError(f"unsupported {kind} container version {version!r}", offset=4)
    payload = raw[len(magic) : -4]
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise DataFormatError(f"{kind} checksum mismatch (file damaged or truncated)")
    return payload


def _finalize(magic, payload: bytes) -> bytes:
    return magic + payload + struct.pack("<I", zlib.crc32(payload))


# ---------------------------------------------------------------------------
# Model container

def _write_selection(w, selection):
    if selection is None:
        w.u8(0)
        return
    w.u8(1)
    w.string(selection.mode)
    w.u8(0 if selection.lam is None else 1)
    w.f64(0.0 if selection.lam is None else float(selection.lam))
    w.u32(len(selection.chosen))
    for c in selection.chosen:
        w.u32(int(c))
    for g in selection.gains:
        w.f64(float(g))


def _read_selection(r):
    if r.u8() == 0:
        return None
    mode = r.string()
    has_lam = r.u8()
    lam = r.f64()
    k = r.u32()
    chosen = [r.u32() for _ in range(k)]
    gains = [r.f64() for _ in range(k)]
    return SelectionResult(chosen=chosen, gains=gains, mode=mode,
                           lam=lam if has_lam else None)


def _write_kernel(w, kc):
    w.u8(_KERNEL_CODES[None if kc is None else kc.kind])
    if kc is None:
        return
    if kc.kind == "rbf":
        w.f64(kc.sigma)
    else:
        w.f64(kc.p)
        w.f64(kc.q)
    w.array(kc.anchors)


def _read_kernel(r):
    code = r.u8()
    if code == 0:
        return None
    if code == 1:
        sigma = r.f64()
        return KernelConfig(anchors=r.array(), kind="rbf", sigma=sigma)
    if code == 2:
        p, q = r.f64(), r.f64()
        return KernelConfig(anchors=r.array(), kind="polynomial", p=p, q=q)
    raise DataFormatError(f"unknown kernel code {code}", offset=r.base + r.pos - 1)


def _write_net(w, net):
    w.u8(len(net.layers))
    for layer in net.layers:
        w.array(layer.weight)
        w.array(layer.bias)
        w.u8(_ACT_CODES[layer.activation])


def _read_net(r):
    n_layers = r.u8()
    layers = []
    for _ in range(n_layers):
        weight = r.array()
        bias = r.array()
        act = _ACT_NAMES.get(r.u8())
        layers.append(DenseLayer(weight=weight, bias=bias, activation=act))
    return DenseNet(layers=layers)


def _write_node(w, node):
    w.u8(1 if node.degenerate else 0)
    items = sorted(node.class_partition.items())
    w.u32(len(items))
    for cls, side in items:
        w.i64(int(cls))
        w.u8(1 if side == "pos" else 0)
    if node.degenerate:
        return
    w.u8(1 if node.transform is not None else 0)
    if node.transform is not None:
        w.array(node.transform.w)
    w.u8(1 if node.net is not None else 0)
    if node.net is not None:
        _write_net(w, node.net)
    w.array(node.proj_pos)
    w.array(node.proj_neg)


def _read_node(r):
    degenerate = r.u8() == 1
    n_cls = r.u32()
    partition = {}
    for _ in range(n_cls):
        cls = r.i64()
        partition[cls] = "pos" if r.u8() else "neg"
    if degenerate:
        return SplitNode(class_partition=partition, degenerate=True)
    transform = Transform(w=r.array()) if r.u8() else None
    net = _read_net(r) if r.u8() else None
    proj_pos = r.array()
    proj_neg = r.array()
    return SplitNode(proj_pos=proj_pos, proj_neg=proj_neg, transform=transform,
                     net=net, class_partition=partition)


def _config_to_json(cfg: ForestConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)


def _config_from_json(text: str) -> ForestConfig:
    d = json.loads(text)
    split = d.pop("split")
    opt = OptimizerConfig(**split.pop("optimizer"))
    net = NetConfig(**split.pop("net"))
    split["net_hidden"] = tuple(split["net_hidden"])
    return ForestConfig(split=SplitConfig(optimizer=opt, net=net, **split), **d)


def save_model(forest: Forest, selection, path):
    """Write the forest and its block selection as one FHSH01 container."""
    w = _Writer()
    w.u8(len(forest.feature_dims))
    w.u32(forest.n_trees)
    w.u8(forest.depth)
    w.u8(_LEARNER_CODES[forest.learner])
    w.i64(forest.master_seed)
    for dim in forest.feature_dims:
        w.u32(dim)
    w.string(_config_to_json(forest.config))
    _write_selection(w, selection)
    for tree in forest.trees:
        w.i64(tree.tree_seed)
        for kc in tree.kernels:
            _write_kernel(w, kc)
        for per_mod in tree.nodes:
            for node in per_mod:
                _write_node(w, node)
    with open(path, "wb") as fh:
        fh.write(_finalize(MODEL_MAGIC, bytes(w.buf)))


def load_model(path):
    """Read an FHSH01 container; returns ``(forest, selection)``."""
    payload = _checked_payload(_read_file(path), MODEL_MAGIC, "model")
    r = _Reader(payload, base_offset=len(MODEL_MAGIC))
    n_modalities = r.u8()
    n_trees = r.u32()
    depth = r.u8()
    learner = _LEARNER_NAMES.get(r.u8())
    if learner is None:
        raise DataFormatError("unknown learner code", offset=r.base + r.pos - 1)
    master_seed = r.i64()
    feature_dims = tuple(r.u32() for _ in range(n_modalities))
    config = _config_from_json(r.string())
    selection = _read_selection(r)
    internal = 2 ** (depth - 1) - 1
    trees = []
    for _ in range(n_trees):
        tree_seed = r.i64()
        kernels = tuple(_read_kernel(r) for _ in range(n_modalities))
        nodes = []
        for _ in range(internal):
            nodes.append([_read_node(r) for _ in range(n_modalities)])
        trees.append(
            HashTree(depth=depth, nodes=nodes, learner=learner, tree_seed=tree_seed,
                     kernels=kernels, feature_dims=feature_dims)
        )
    r.done()
    forest = Forest(trees=trees, master_seed=master_seed, depth=depth, learner=learner,
                    feature_dims=feature_dims, config=config, selection=selection)
    return forest, selection


# ---------------------------------------------------------------------------
# Codes file

def save_codes(codes: PackedCodes, labels, path):
    """Write packed codes (and optional labels) as one FHCD01 container."""
    w = _Writer()
    w.u64(len(codes))
    w.u32(codes.length)
    w.u8(1 if labels is not None else 0)
    w.buf += np.ascontiguousarray(codes.words, dtype="<u8").tobytes()
    if labels is not None:
        labels = np.asarray(labels, dtype="<i8")
        if labels.shape[0] != len(codes):
            raise InvalidInputError("labels length does not match the codes")
        w.buf += labels.tobytes()
    with open(path, "wb") as fh:
        fh.write(_finalize(CODES_MAGIC, bytes(w.buf)))


def load_codes(path):
    """Read an FHCD01 container; returns ``(codes, labels_or_None)``."""
    payload = _checked_payload(_read_file(path), CODES_MAGIC, "codes")
    r = _Reader(payload, base_offset=len(CODES_MAGIC))
    count = r.u64()
    length = r.u32()
    has_labels = r.u8()
    wpl = _words_for(length)
    words = np.frombuffer(r._take(count * wpl * 8), dtype="<u8").reshape(count, wpl)
    labels = None
    if has_labels:
        labels = np.frombuffer(r._take(count * 8), dtype="<i8").copy()
    r.done()
    return PackedCodes(words=words.copy(), length=length), labels
