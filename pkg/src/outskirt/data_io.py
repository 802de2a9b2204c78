"""Dataset ingestion, synthetic data and model persistence.

Supported inputs: MNIST IDX files (optionally gzipped), folders of 8-bit
binary PGM (P5) images with one subdirectory per class, CSV matrices with
a header row, and Gaussian blobs.  Pixels are always rescaled to [0, 1].
The binary model layout is documented in ``docs/model_format.md``.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import CLASSIFIER_TYPES
from .config import PipelineConfig
from .errors import ConfigError, DataError
from .hierarchy import FeatureAE, FusionAE, FusionVAE, Hierarchy, LatentCatalog
from .model import PipelineModel
from .nnet import ACTIVATIONS, DenseNet, Layer

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Images (or plain vectors) with integer labels.

    ``images`` is either an ``(n, h, w)`` array, a list of 2-D arrays of
    varying size, or an ``(n, d)`` array of feature vectors.
    """

    images: object
    labels: np.ndarray
    source: str = ""
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} samples but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def is_vector(self):
        return isinstance(self.images, np.ndarray) and self.images.ndim == 2

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if isinstance(self.images, np.ndarray):
            imgs = self.images[idx]
        else:
            imgs = [self.images[i] for i in idx]
        return Dataset(imgs, self.labels[idx], self.source, self.class_names)

    def fingerprint(self):
        h = hashlib.sha256()
        if isinstance(self.images, np.ndarray):
            h.update(np.ascontiguousarray(self.images, dtype=np.float64).tobytes())
        else:
            for im in self.images:
                h.update(np.ascontiguousarray(im, dtype=np.float64).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


# -- IDX -----------------------------------------------------------------------


def _read_bytes(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _idx_header(data, expected, path):
    if len(data) < 8:
        raise DataError(f"{path}: truncated header")
    magic, count = struct.unpack_from(">II", data, 0)
    if magic != expected:
        raise DataError(
            f"{path}: bad magic 0x{magic:08x} at offset 0 (expected 0x{expected:08x})"
        )
    return count


def read_idx_images(path):
    data = _read_bytes(path)
    count = _idx_header(data, IDX_IMAGES_MAGIC, path)
    if len(data) < 16:
        raise DataError(f"{path}: truncated header")
    rows, cols = struct.unpack_from(">II", data, 8)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise DataError(f"{path}: truncated payload ({len(data)} of {need} bytes)")
    pix = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pix.reshape(count, rows, cols).astype(np.float64) / 255.0


def read_idx_labels(path):
    data = _read_bytes(path)
    count = _idx_header(data, IDX_LABELS_MAGIC, path)
    if len(data) < 8 + count:
        raise DataError(f"{path}: truncated payload ({len(data)} of {8 + count} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(path_images, path_labels):
    images = read_idx_images(path_images)
    labels = read_idx_labels(path_labels)
    if len(images) != len(labels):
        raise DataError(
            f"image file holds {len(images)} items but label file holds {len(labels)}"
        )
    return Dataset(images, labels, source=f"idx:{path_images},{path_labels}")


def write_idx(path_images, path_labels, images, labels):
    """Write uint8 IDX files; ``images`` are floats in [0, 1] or uint8."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0, 1) * 255).astype(np.uint8)
    n, rows, cols = images.shape
    with open(path_images, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(path_labels, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist_dir(directory, split="train"):
    directory = Path(directory)
    stem = "train" if split == "train" else "t10k"
    found = {}
    for kind, suffix in (("images", "idx3-ubyte"), ("labels", "idx1-ubyte")):
        for name in (f"{stem}-{kind}-{suffix}", f"{stem}-{kind}.{suffix}"):
            for ext in ("", ".gz"):
                if (directory / (name + ext)).exists():
                    found[kind] = directory / (name + ext)
        if kind not in found:
            raise DataError(f"{directory}: missing {stem}-{kind}-{suffix}[.gz]")
    return load_idx(found["images"], found["labels"])


# -- PGM -----------------------------------------------------------------------


def _pgm_tokens(data, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("malformed PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_pgm(path):
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _pgm_tokens(data, 4)
    if magic != b"P5":
        raise DataError(f"{path}: only binary P5 PGM is supported")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if not (0 < maxval <= 255) or w <= 0 or h <= 0:
        raise DataError(f"{path}: unsupported PGM geometry or maxval {maxval}")
    raster = data[offset : offset + w * h]
    if len(raster) != w * h:
        raise DataError(f"{path}: truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_pgm_dir(directory):
    """One subdirectory per class, files read in sorted order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    images, labels, names = [], [], []
    for label, sub in enumerate(sorted(p for p in directory.iterdir() if p.is_dir())):
        names.append(sub.name)
        shape = None
        for f in sorted(sub.glob("*.pgm")):
            img = read_pgm(f)
            if shape is not None and img.shape != shape:
                raise DataError(f"{f}: size {img.shape} differs from {shape} in class {sub.name}")
            shape = img.shape
            images.append(img)
            labels.append(label)
    return Dataset(images, np.array(labels, dtype=np.int64), f"pgm:{directory}", names)


# -- CSV -----------------------------------------------------------------------


def load_csv(path):
    """Numeric CSV with a header row -> ``(header, matrix)``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    try:
        mat = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from None
    if body and mat.shape[1] != len(header):
        raise DataError(f"{path}: rows have {mat.shape[1]} columns, header has {len(header)}")
    return header, mat.reshape(len(body), len(header))


def save_csv(path, header, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.atleast_2d(matrix):
            w.writerow([repr(float(v)) for v in row])


def load_csv_dataset(path, label_column="label"):
    header, mat = load_csv(path)
    if label_column not in header:
        raise DataError(f"{path}: no '{label_column}' column")
    j = header.index(label_column)
    X = np.delete(mat, j, axis=1)
    return Dataset(X, mat[:, j].astype(np.int64), f"csv:{path}")


# -- synthetic -------------------------------------------------------------------


def make_blobs(n_in, n_out, d=2, separation=10.0, seed=0):
    """Inliers ~ N(0, I); true outliers ~ N(separation * u, I) for a random unit u."""
    if n_in < 10:
        raise ConfigError("make_blobs needs n_in >= 10")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    inliers = rng.standard_normal((n_in, d))
    outliers = rng.standard_normal((n_out, d)) + separation * u
    return inliers, outliers


def blobs_dataset(n_in=500, n_out=500, d=2, separation=10.0, seed=0):
    inl, out = make_blobs(n_in, n_out, d, separation, seed)
    X = np.vstack([inl, out])
    y = np.concatenate([np.zeros(n_in, np.int64), np.ones(n_out, np.int64)])
    return Dataset(X, y, f"blobs:n_in={n_in},n_out={n_out},d={d},separation={separation},seed={seed}")


# -- model files -------------------------------------------------------------------

MODEL_MAGIC = b"OSKTMDL\x00"
MODEL_VERSION = (1, 0, 0)
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def _nets_to_bytes(nets):
    out = [struct.pack("<I", len(nets))]
    for net in nets:
        out.append(struct.pack("<IQ", len(net.layers), net.rng_seed & (2**64 - 1)))
        for layer in net.layers:
            out.append(struct.pack("<IIB", layer.out_dim, layer.in_dim, _ACT_CODES[layer.activation]))
        for layer in net.layers:
            out.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            out.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(out)


def _nets_from_bytes(buf):
    (n_nets,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    nets = []
    for _ in range(n_nets):
        n_layers, seed = struct.unpack_from("<IQ", buf, pos)
        pos += 12
        shapes = []
        for _ in range(n_layers):
            out_dim, in_dim, act = struct.unpack_from("<IIB", buf, pos)
            pos += 9
            shapes.append((out_dim, in_dim, ACTIVATIONS[act]))
        layers = []
        for out_dim, in_dim, act in shapes:
            w = np.frombuffer(buf, "<f8", out_dim * in_dim, pos).reshape(out_dim, in_dim)
            pos += 8 * out_dim * in_dim
            b = np.frombuffer(buf, "<f8", out_dim, pos)
            pos += 8 * out_dim
            layers.append(Layer(w.astype(np.float64), b.astype(np.float64), act))
        nets.append(DenseNet(layers, rng_seed=seed))
    return nets


def _bundle_to_bytes(meta, arrays):
    names = sorted(arrays)
    spec = {"meta": meta, "arrays": [[n, list(np.shape(arrays[n]))] for n in names]}
    head = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    return struct.pack("<I", len(head)) + head + body


def _bundle_from_bytes(buf):
    (n,) = struct.unpack_from("<I", buf, 0)
    spec = json.loads(buf[4 : 4 + n])
    pos = 4 + n
    arrays = {}
    for name, shape in spec["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(buf, "<f8", size, pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return spec["meta"], arrays


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def model_to_bytes(model):
    h = model.hierarchy
    if isinstance(h.fusion, FusionVAE):
        fusion_kind = "vae"
    elif isinstance(h.fusion, FusionAE):
        fusion_kind = "ae"
    else:
        fusion_kind = "none"
    hmeta = {
        "ae_mode": h.ae_mode,
        "feature_dims": list(h.feature_dims),
        "unit_range": list(h.unit_range),
        "ae_loss": h.ae_loss,
        "fusion": fusion_kind,
        "aes": [[ae.feature_index, ae.noise_sigma] for ae in h.aes],
    }
    cmeta, carrays = model.classifier.state()
    cmeta = dict(cmeta, kind=model.classifier.kind)
    sections = [
        (b"CONF", _json_bytes(model.config.to_flat())),
        (b"HIER", _json_bytes(hmeta)),
        (b"AEWT", _nets_to_bytes(h.nets("aes"))),
        (b"FUSN", _nets_to_bytes(h.nets("fusion"))),
        (b"CLSF", _bundle_to_bytes(cmeta, carrays)),
        (b"META", _json_bytes(model.meta)),
    ]
    if model.catalog is not None:
        arrays = {"mu": model.catalog.mu}
        if model.catalog.sigma is not None:
            arrays["sigma"] = model.catalog.sigma
        sections.append((b"QCAT", _bundle_to_bytes({}, arrays)))

    header_len = 8 + 6 + 4 + 20 * len(sections)
    table, payload = [], []
    offset = header_len
    for tag, data in sections:
        table.append(struct.pack("<4sQQ", tag, offset, len(data)))
        payload.append(data)
        offset += len(data)
    blob = (MODEL_MAGIC + struct.pack("<HHH", *MODEL_VERSION)
            + struct.pack("<I", len(sections)) + b"".join(table) + b"".join(payload))
    return blob + struct.pack("<I", zlib.crc32(blob))


def model_from_bytes(blob):
    if len(blob) < 22 or blob[:8] != MODEL_MAGIC:
        raise DataError("not an outskirt model file (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise DataError("model file checksum mismatch")
    version = struct.unpack_from("<HHH", blob, 8)
    if version[:2] > MODEL_VERSION[:2]:
        raise DataError(f"model file version {'.'.join(map(str, version))} is newer than "
                        f"supported {'.'.join(map(str, MODEL_VERSION))}")
    (n_sections,) = struct.unpack_from("<I", blob, 14)
    sections = {}
    for k in range(n_sections):
        tag, offset, length = struct.unpack_from("<4sQQ", blob, 18 + 20 * k)
        sections[tag] = blob[offset : offset + length]

    config = PipelineConfig.from_flat(json.loads(sections[b"CONF"]))
    hmeta = json.loads(sections[b"HIER"])
    ae_nets = _nets_from_bytes(sections[b"AEWT"])
    aes = [FeatureAE(ae_nets[2 * k], ae_nets[2 * k + 1], idx, sigma)
           for k, (idx, sigma) in enumerate(hmeta["aes"])]
    fnets = _nets_from_bytes(sections[b"FUSN"])
    fusion = {"vae": lambda: FusionVAE(*fnets), "ae": lambda: FusionAE(*fnets),
              "none": lambda: None}[hmeta["fusion"]]()
    hierarchy = Hierarchy(aes, fusion, hmeta["ae_mode"], hmeta["feature_dims"],
                          hmeta["ae_loss"], hmeta["unit_range"])
    cmeta, carrays = _bundle_from_bytes(sections[b"CLSF"])
    kind = cmeta.pop("kind")
    classifier = CLASSIFIER_TYPES[kind].from_state(cmeta, carrays)
    catalog = None
    if b"QCAT" in sections:
        _, q = _bundle_from_bytes(sections[b"QCAT"])
        catalog = LatentCatalog(q["mu"], q.get("sigma"))
    meta = json.loads(sections[b"META"])
    return PipelineModel(config, hierarchy, classifier, catalog, meta)


def save_model(model, path):
    blob = model_to_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return path


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such model file: {path}")
    return model_from_bytes(path.read_bytes())


def parse_dataset_spec(spec):
    """Resolve a ``--dataset`` string into a Dataset.

    Forms: ``mnist:DIR``, ``idx:IMAGES,LABELS``, ``pgm:DIR``, ``csv:PATH``
    (needs a ``label`` column) and ``blobs:n_in=500,n_out=500,d=2,separation=10,seed=0``.
    """
    if ":" not in spec:
        raise ConfigError(f"dataset spec {spec!r} must look like kind:argument")
    kind, arg = spec.split(":", 1)
    if kind == "mnist":
        return load_mnist_dir(arg)
    if kind == "idx":
        parts = arg.split(",")
        if len(parts) != 2:
            raise ConfigError("idx dataset spec needs IMAGES,LABELS")
        return load_idx(*parts)
    if kind == "pgm":
        return load_pgm_dir(arg)
    if kind == "csv":
        return load_csv_dataset(arg)
    if kind == "blobs":
        kwargs = {}
        casts = {"n_in": int, "n_out": int, "d": int, "separation": float, "seed": int}
        for item in filter(None, arg.split(",")):
            key, _, value = item.partition("=")
            if key not in casts:
                raise ConfigError(f"unknown blobs parameter {key!r}")
            kwargs[key] = casts[key](value)
        return blobs_dataset(**kwargs)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def dumps_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
