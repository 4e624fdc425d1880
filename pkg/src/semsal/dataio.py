"""On-disk data model: manifests, feature blobs, PGM maps, checkpoints.

A dataset lives in a directory with a JSON manifest listing every image, its
object proposals and the files backing them.  Pixel data (candidate saliency
maps, ground-truth masks, optional grayscale images) is stored as binary PGM;
dense feature vectors live in a single packed blob so records can reference
them by index without copying.

Binary formats (all little-endian, no padding):

``SRF1`` feature blob
    magic ``SRF1`` | u32 count | u32 dim | count*dim float32

``SRM1`` ranker checkpoint
    magic ``SRM1`` | u32 n_dims | u32 dims[n_dims] | u32 activation tag |
    u64 seed | u32 epoch | f64 loss | per layer: float32 W (out*in,
    row-major) then float32 bias (out)

Readers validate structure and finiteness and raise :class:`FormatError`
or :class:`ValidationError` naming the offending record; writers are
deterministic, so writing the same value twice yields byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

FEATURE_MAGIC = b"SRF1"
CHECKPOINT_MAGIC = b"SRM1"
_ACTIVATION_TAGS = {"relu": 0}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_TAGS.items()}


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box in pixel coordinates, (x, y) top-left, half-open."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValidationError(f"box field {name}: expected int, got {v!r}")
        if self.w < 1 or self.h < 1:
            raise ValidationError(f"box {self.as_tuple()}: width/height must be >= 1")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"box {self.as_tuple()}: negative origin")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    def slices(self) -> tuple[slice, slice]:
        """Index slices (rows, cols) selecting this box in an image array."""
        return (slice(self.y, self.y + self.h), slice(self.x, self.x + self.w))

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height


@dataclass(frozen=True)
class ObjectProposal:
    """A candidate object region plus references into the feature blob."""

    id: str
    box: BBox
    confidence: float
    feature_ref: int
    context_feature_ref: int

    def __post_init__(self):
        if not self.id:
            raise ValidationError("proposal with empty id")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"proposal '{self.id}': confidence "
                                  f"{self.confidence} outside [0, 1]")


@dataclass
class ImageRecord:
    """One dataset image: proposals plus paths/refs to its pixel data."""

    id: str
    width: int
    height: int
    proposals: list[ObjectProposal] = field(default_factory=list)
    image_path: Path | None = None
    gt_mask_path: Path | None = None
    candidate_map_paths: list[Path] = field(default_factory=list)
    image_feature_ref: int | None = None
    scene_descriptor_ref: int | None = None
    scene_descriptor: np.ndarray | None = None  # filled lazily by retrieval

    @property
    def has_gt(self) -> bool:
        return self.gt_mask_path is not None


# ---------------------------------------------------------------------------
# feature blobs


class FeatureStore:
    """Immutable (count, dim) float32 matrix addressed by integer reference."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"feature store: expected 2-d array, got "
                                  f"shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.argwhere(~np.isfinite(vectors).all(axis=1))[0, 0])
            raise ValidationError(f"feature store: non-finite values in vector {bad}")
        self._vectors = vectors
        self._vectors.setflags(write=False)

    @classmethod
    def empty(cls) -> "FeatureStore":
        return cls(np.zeros((0, 0), dtype=np.float32))

    @property
    def count(self) -> int:
        return self._vectors.shape[0]

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    def get(self, ref: int) -> np.ndarray:
        if not (0 <= ref < self.count):
            raise ValidationError(f"dangling feature reference {ref} "
                                  f"(store holds {self.count} vectors)")
        return self._vectors[ref]

    def gather(self, refs) -> np.ndarray:
        refs = np.asarray(refs)
        if refs.size and (refs.min() < 0 or refs.max() >= self.count):
            raise ValidationError(f"dangling feature reference in batch "
                                  f"(store holds {self.count} vectors)")
        return self._vectors[refs]


def write_feature_blob(vectors: np.ndarray, path) -> None:
    store = vectors if isinstance(vectors, FeatureStore) else FeatureStore(vectors)
    arr = store.vectors
    header = FEATURE_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_feature_blob(path) -> FeatureStore:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise FormatError(f"feature blob '{path}': truncated header "
                          f"({len(data)} bytes)")
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"feature blob '{path}': bad magic {data[:4]!r}")
    count, dim = struct.unpack_from("<II", data, 4)
    expected = count * dim * 4
    actual = len(data) - 12
    if actual != expected:
        raise FormatError(f"feature blob '{path}': header declares count {count} "
                          f"x dim {dim} ({expected} payload bytes), got {actual}")
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=12)
    vectors = vectors.reshape(count, dim).astype(np.float32, copy=True)
    if not np.all(np.isfinite(vectors)):
        bad = int(np.argwhere(~np.isfinite(vectors).all(axis=1))[0, 0])
        raise ValidationError(f"feature blob '{path}': non-finite values in "
                              f"vector {bad}")
    return FeatureStore(vectors)


# ---------------------------------------------------------------------------
# PGM maps


def write_map(saliency: np.ndarray, path) -> None:
    """Write a [0, 1] map as binary PGM (maxval 255, round-to-nearest)."""
    from .validation import check_map

    saliency = check_map(saliency, f"map for '{path}'")
    q = np.rint(saliency * 255.0).astype(np.uint8)
    h, w = q.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def _parse_pgm(data: bytes, path) -> tuple[int, int, np.ndarray]:
    if data[:2] != b"P5":
        raise FormatError(f"map '{path}': not a binary PGM (magic {data[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"map '{path}': truncated header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise FormatError(f"map '{path}': non-numeric header token "
                              f"{data[start:pos]!r}")
    pos += 1  # single whitespace byte separating header and raster
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"map '{path}': invalid dimensions {w}x{h}")
    if maxval != 255:
        raise FormatError(f"map '{path}': unsupported maxval {maxval} (want 255)")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"map '{path}': expected {w * h} raster bytes, "
                          f"got {len(raster)}")
    return w, h, np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def read_map(path) -> np.ndarray:
    """Read a PGM saliency map as float64 in [0, 1], shape (h, w)."""
    path = Path(path)
    w, h, q = _parse_pgm(path.read_bytes(), path)
    return q.astype(np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Read a PGM ground-truth mask, binarizing at byte value > 127."""
    path = Path(path)
    w, h, q = _parse_pgm(path.read_bytes(), path)
    return (q > 127).astype(np.float64)


# ---------------------------------------------------------------------------
# ranker checkpoints


@dataclass
class RankerCheckpoint:
    """Serialized ranker: layer dims, parameters and training metadata."""

    dims: tuple[int, ...]
    weights: list[np.ndarray]  # each (out, in) float32
    biases: list[np.ndarray]   # each (out,) float32
    activation: str = "relu"
    seed: int = 0
    epoch: int = 0
    loss: float = 0.0

    def validate(self) -> None:
        if len(self.dims) < 2:
            raise ValidationError(f"checkpoint: needs >= 2 layer dims, got "
                                  f"{self.dims}")
        if any(d < 1 for d in self.dims):
            raise ValidationError(f"checkpoint: non-positive layer dim in "
                                  f"{self.dims}")
        n_layers = len(self.dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValidationError("checkpoint: weight/bias count does not match "
                                  "layer dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.dims[i + 1], self.dims[i])
            if w.shape != want:
                raise ValidationError(f"checkpoint: layer {i} weight shape "
                                      f"{w.shape}, expected {want}")
            if b.shape != (self.dims[i + 1],):
                raise ValidationError(f"checkpoint: layer {i} bias shape "
                                      f"{b.shape}, expected ({self.dims[i + 1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"checkpoint: non-finite parameter in "
                                      f"layer {i}")
        if self.activation not in _ACTIVATION_TAGS:
            raise ValidationError(f"checkpoint: unknown activation "
                                  f"'{self.activation}'")


def save_checkpoint(ckpt: RankerCheckpoint, path) -> None:
    ckpt.validate()
    out = [CHECKPOINT_MAGIC, struct.pack("<I", len(ckpt.dims))]
    out.append(struct.pack(f"<{len(ckpt.dims)}I", *ckpt.dims))
    out.append(struct.pack("<IQId", _ACTIVATION_TAGS[ckpt.activation],
                           ckpt.seed, ckpt.epoch, ckpt.loss))
    for w, b in zip(ckpt.weights, ckpt.biases):
        out.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> RankerCheckpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8:
        raise FormatError(f"checkpoint '{path}': truncated header")
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint '{path}': bad magic {data[:4]!r}")
    (n_dims,) = struct.unpack_from("<I", data, 4)
    if n_dims < 2 or n_dims > 64:
        raise FormatError(f"checkpoint '{path}': implausible layer count "
                          f"{n_dims}")
    pos = 8
    if len(data) < pos + 4 * n_dims + 24:
        raise FormatError(f"checkpoint '{path}': truncated metadata")
    dims = struct.unpack_from(f"<{n_dims}I", data, pos)
    pos += 4 * n_dims
    tag, seed, epoch, loss = struct.unpack_from("<IQId", data, pos)
    pos += 24
    if tag not in _ACTIVATION_NAMES:
        raise FormatError(f"checkpoint '{path}': unknown activation tag {tag}")
    n_params = sum(dims[i + 1] * dims[i] + dims[i + 1]
                   for i in range(n_dims - 1))
    expected = n_params * 4
    actual = len(data) - pos
    if actual != expected:
        raise FormatError(f"checkpoint '{path}': layer dims "
                          f"{'x'.join(map(str, dims))} require {expected} "
                          f"parameter bytes, got {actual}")
    weights, biases = [], []
    for i in range(n_dims - 1):
        n_w = dims[i + 1] * dims[i]
        w = np.frombuffer(data, dtype="<f4", count=n_w, offset=pos)
        pos += n_w * 4
        b = np.frombuffer(data, dtype="<f4", count=dims[i + 1], offset=pos)
        pos += dims[i + 1] * 4
        weights.append(w.reshape(dims[i + 1], dims[i]).astype(np.float32, copy=True))
        biases.append(b.astype(np.float32, copy=True))
    ckpt = RankerCheckpoint(dims=tuple(int(d) for d in dims), weights=weights,
                            biases=biases,
                            activation=_ACTIVATION_NAMES[tag],
                            seed=int(seed), epoch=int(epoch), loss=float(loss))
    ckpt.validate()
    return ckpt


# ---------------------------------------------------------------------------
# manifests


class Dataset:
    """A loaded manifest: image records plus lazily-read pixel data."""

    def __init__(self, root: Path, images: list[ImageRecord],
                 features: FeatureStore, descriptors: FeatureStore | None):
        self.root = root
        self.images = images
        self.features = features
        self.descriptors = descriptors
        self._by_id = {rec.id: rec for rec in images}
        self._map_cache: dict[Path, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def get(self, image_id: str) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise ValidationError(f"unknown image id '{image_id}'")

    def _cached_map(self, path: Path, reader) -> np.ndarray:
        if path not in self._map_cache:
            self._map_cache[path] = reader(path)
        return self._map_cache[path]

    def gt_mask(self, rec: ImageRecord) -> np.ndarray | None:
        if rec.gt_mask_path is None:
            return None
        mask = self._cached_map(rec.gt_mask_path, read_mask)
        if mask.shape != (rec.height, rec.width):
            raise ValidationError(f"image '{rec.id}': ground-truth mask shape "
                                  f"{mask.shape} does not match declared "
                                  f"{rec.height}x{rec.width}")
        return mask

    def candidate_maps(self, rec: ImageRecord) -> list[np.ndarray]:
        maps = []
        for path in rec.candidate_map_paths:
            m = self._cached_map(path, read_map)
            if m.shape != (rec.height, rec.width):
                raise ValidationError(f"image '{rec.id}': candidate map "
                                      f"'{path.name}' shape {m.shape} does not "
                                      f"match declared {rec.height}x{rec.width}")
            maps.append(m)
        return maps

    def image_gray(self, rec: ImageRecord) -> np.ndarray | None:
        if rec.image_path is None:
            return None
        img = self._cached_map(rec.image_path, read_map)
        if img.shape != (rec.height, rec.width):
            raise ValidationError(f"image '{rec.id}': pixel data shape "
                                  f"{img.shape} does not match declared "
                                  f"{rec.height}x{rec.width}")
        return img

    def image_feature(self, rec: ImageRecord) -> np.ndarray:
        if rec.image_feature_ref is None:
            raise ValidationError(f"image '{rec.id}': no image feature")
        return self.features.get(rec.image_feature_ref)


def _require(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ValidationError(f"{where}: missing required field '{key}'")
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise ValidationError(f"{where}: field '{key}' must be an integer")
    if not isinstance(value, kind):
        raise ValidationError(f"{where}: field '{key}' has wrong type "
                              f"({type(value).__name__})")
    return value


def _optional_ref(obj: dict, key: str, store: FeatureStore | None,
                  store_name: str, where: str) -> int | None:
    if obj.get(key) is None:
        return None
    ref = obj[key]
    if not isinstance(ref, int) or isinstance(ref, bool):
        raise ValidationError(f"{where}: field '{key}' must be an integer index")
    if store is None or not (0 <= ref < store.count):
        have = 0 if store is None else store.count
        raise ValidationError(f"{where}: dangling {store_name} reference {ref} "
                              f"(blob holds {have} vectors)")
    return ref


def _parse_proposal(obj: dict, rec_id: str, width: int, height: int,
                    features: FeatureStore) -> ObjectProposal:
    where = f"image '{rec_id}'"
    pid = _require(obj, "id", str, where)
    where = f"image '{rec_id}', proposal '{pid}'"
    raw_box = _require(obj, "box", list, where)
    if len(raw_box) != 4 or not all(isinstance(v, int) and not isinstance(v, bool)
                                    for v in raw_box):
        raise ValidationError(f"{where}: box must be four integers, got {raw_box}")
    try:
        box = BBox(*raw_box)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}")
    if not box.fits(width, height):
        raise ValidationError(f"{where}: box {box.as_tuple()} exceeds image "
                              f"bounds {width}x{height}")
    confidence = _require(obj, "confidence", (int, float), where)
    f_ref = _require(obj, "feature", int, where)
    c_ref = _require(obj, "context_feature", int, where)
    for name, ref in (("feature", f_ref), ("context_feature", c_ref)):
        if not (0 <= ref < features.count):
            raise ValidationError(f"{where}: dangling {name} reference {ref} "
                                  f"(blob holds {features.count} vectors)")
    try:
        return ObjectProposal(id=pid, box=box, confidence=float(confidence),
                              feature_ref=f_ref, context_feature_ref=c_ref)
    except ValidationError as exc:
        raise ValidationError(f"image '{rec_id}': {exc}")


def load_manifest(path) -> Dataset:
    """Load and validate a dataset manifest, resolving blob references."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest '{path}': invalid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ValidationError(f"manifest '{path}': top level must be an object")
    root = path.parent

    features = FeatureStore.empty()
    if doc.get("feature_blob") is not None:
        features = read_feature_blob(root / _require(doc, "feature_blob", str,
                                                     "manifest"))
    descriptors = None
    if doc.get("descriptor_blob") is not None:
        descriptors = read_feature_blob(root / _require(doc, "descriptor_blob",
                                                        str, "manifest"))

    raw_images = _require(doc, "images", list, "manifest")
    images: list[ImageRecord] = []
    seen: set[str] = set()
    for idx, obj in enumerate(raw_images):
        if not isinstance(obj, dict):
            raise ValidationError(f"manifest image #{idx}: expected an object")
        rec_id = _require(obj, "id", str, f"manifest image #{idx}")
        if not rec_id:
            raise ValidationError(f"manifest image #{idx}: empty id")
        if rec_id in seen:
            raise ValidationError(f"duplicate image id '{rec_id}'")
        seen.add(rec_id)
        where = f"image '{rec_id}'"
        width = _require(obj, "width", int, where)
        height = _require(obj, "height", int, where)
        if width < 1 or height < 1:
            raise ValidationError(f"{where}: non-positive dimensions "
                                  f"{width}x{height}")
        proposals = [_parse_proposal(p, rec_id, width, height, features)
                     for p in obj.get("proposals", [])]
        pids = [p.id for p in proposals]
        if len(set(pids)) != len(pids):
            raise ValidationError(f"{where}: duplicate proposal ids")
        rec = ImageRecord(
            id=rec_id, width=width, height=height, proposals=proposals,
            image_path=root / obj["image"] if obj.get("image") else None,
            gt_mask_path=root / obj["gt_mask"] if obj.get("gt_mask") else None,
            candidate_map_paths=[root / p for p in obj.get("candidate_maps", [])],
            image_feature_ref=_optional_ref(obj, "image_feature", features,
                                            "feature", where),
            scene_descriptor_ref=_optional_ref(obj, "scene_descriptor",
                                               descriptors, "descriptor", where),
        )
        images.append(rec)
    return Dataset(root=root, images=images, features=features,
                   descriptors=descriptors)


def save_manifest(doc: dict, path) -> None:
    """Write a manifest dict as canonical JSON (sorted keys, 2-space indent)."""
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)
