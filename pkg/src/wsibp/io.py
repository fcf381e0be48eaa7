"""Versioned on-disk formats for datasets, models, posteriors and results.

All files are line-oriented ``key: value`` text; large numeric payloads can
be embedded as little-endian binary blocks announced by a ``binary <nbytes>``
header line. Binary mode round-trips bit-exactly; text mode stores full-
precision decimal reprs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import (
    AppearanceModel,
    Bag,
    BagPosterior,
    CorrelationMatrix,
    DatasetError,
    FormatError,
    ModelConfig,
    VocabMismatchError,
    WeakLabels,
)
from .tasks import SegmentationMap

DATASET_MAGIC = "format: wsibp-dataset"
MODEL_MAGIC = "format: wsibp-model"
POSTERIORS_MAGIC = "format: wsibp-posteriors"
FORMAT_VERSION = 1

# fixed 20-colour palette for PPM segmentation rasters
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (230, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


class _BlockReader:
    """Sequential reader mixing ascii header lines and raw binary blocks."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def line(self) -> str:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise FormatError(f"{self.name}: unexpected end of file")
        try:
            out = self.data[self.pos:end].decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.name}: non-ascii header line") from exc
        self.pos = end + 1
        return out

    def key(self, expect: str) -> str:
        line = self.line()
        if not line.startswith(expect + ":"):
            raise FormatError(f"{self.name}: expected {expect!r}, got {line!r}")
        return line[len(expect) + 1:].strip()

    def block(self, nbytes: int) -> bytes:
        out = self.data[self.pos: self.pos + nbytes]
        if len(out) != nbytes:
            raise FormatError(f"{self.name}: truncated binary block")
        self.pos += nbytes
        if self.data[self.pos: self.pos + 1] != b"\n":
            raise FormatError(f"{self.name}: missing newline after binary block")
        self.pos += 1
        return out

    def array(self, key: str, shape: tuple[int, ...], dtype) -> np.ndarray:
        """Read an array written by _write_array (binary or text rows)."""
        spec = self.key(key)
        count = int(np.prod(shape)) if shape else 0
        if spec.startswith("binary"):
            nbytes = int(spec.split()[1])
            arr = np.frombuffer(self.block(nbytes), dtype=np.dtype(dtype).newbyteorder("<"))
            if arr.size != count:
                raise FormatError(f"{self.name}: {key} block has {arr.size} values, "
                                  f"expected {count}")
            return arr.astype(dtype).reshape(shape)
        if spec != "text":
            raise FormatError(f"{self.name}: unknown encoding for {key}: {spec!r}")
        rows = shape[0] if shape else 0
        vals = []
        for _ in range(rows):
            line = self.line()
            vals.append([float(v) for v in line.split(",")] if line else [])
        arr = np.array(vals, dtype=dtype).reshape(shape)
        return arr


def _write_array(fh, key: str, arr: np.ndarray, binary: bool) -> None:
    if binary:
        payload = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        fh.write(f"{key}: binary {len(payload)}\n".encode("ascii"))
        fh.write(payload)
        fh.write(b"\n")
    else:
        fh.write(f"{key}: text\n".encode("ascii"))
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
        for row in rows:
            fh.write((",".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


@dataclass
class LoadedDataset:
    bags: list[Bag]
    vocab: list[str]
    k_objects: int
    k_attributes: int
    k_extra: int


def _check_version(reader: _BlockReader, magic: str) -> None:
    first = reader.line()
    if first != magic:
        raise FormatError(f"{reader.name}: bad magic line {first!r}")
    version = int(reader.key("version"))
    if version != FORMAT_VERSION:
        raise FormatError(f"{reader.name}: unknown version {version}")


def save_dataset(path: str, bags: list[Bag], vocab: list[str],
                 k_objects: int, k_attributes: int, k_extra: int,
                 binary: bool = True) -> None:
    """Write a dataset directory: manifest.txt plus one .bag file per bag."""
    if len(vocab) != k_objects + k_attributes + k_extra:
        raise VocabMismatchError("vocab length does not match factor counts")
    os.makedirs(path, exist_ok=True)
    names = []
    for bag in bags:
        fname = f"{bag.id}.bag"
        names.append(fname)
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(f"id: {bag.id}\n".encode("ascii"))
            fh.write(f"instances: {bag.n_instances}\n".encode("ascii"))
            _write_array(fh, "features",
                         np.asarray(bag.features, dtype=np.float32), binary)
            fh.write(f"edges: {len(bag.edges)}\n".encode("ascii"))
            for a, b in bag.edges:
                fh.write(f"{a},{b}\n".encode("ascii"))
            annotated = [vocab[k] for k in range(k_objects + k_attributes)
                         if bag.labels.bits[k] == 1.0]
            fh.write(("labels: " + ",".join(annotated) + "\n").encode("ascii"))
    with open(os.path.join(path, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write(DATASET_MAGIC + "\n")
        fh.write(f"version: {FORMAT_VERSION}\n")
        fh.write(f"feature_dim: {bags[0].feature_dim if bags else 0}\n")
        fh.write(f"mode: {'binary' if binary else 'text'}\n")
        fh.write(f"k_objects: {k_objects}\n")
        fh.write(f"k_attributes: {k_attributes}\n")
        fh.write(f"k_extra: {k_extra}\n")
        fh.write("vocab: " + ",".join(vocab) + "\n")
        fh.write(f"num_bags: {len(bags)}\n")
        for bag, fname in zip(bags, names):
            fh.write(f"bag: {bag.id},{bag.n_instances},{fname}\n")


def load_dataset(path: str) -> LoadedDataset:
    manifest_path = os.path.join(path, "manifest.txt")
    with open(manifest_path, "rb") as fh:
        reader = _BlockReader(fh.read(), manifest_path)
    _check_version(reader, DATASET_MAGIC)
    feature_dim = int(reader.key("feature_dim"))
    reader.key("mode")
    k_objects = int(reader.key("k_objects"))
    k_attributes = int(reader.key("k_attributes"))
    k_extra = int(reader.key("k_extra"))
    vocab_line = reader.key("vocab")
    vocab = vocab_line.split(",") if vocab_line else []
    if len(vocab) != k_objects + k_attributes + k_extra:
        raise VocabMismatchError(
            f"{manifest_path}: vocab length {len(vocab)} does not match factor counts"
        )
    num_bags = int(reader.key("num_bags"))
    name_to_index = {name: k for k, name in enumerate(vocab)}
    k_annotated = k_objects + k_attributes
    k_max = len(vocab)

    bags = []
    for _ in range(num_bags):
        bag_id, n_str, fname = reader.key("bag").split(",")
        n = int(n_str)
        bag_path = os.path.join(path, fname)
        with open(bag_path, "rb") as fh:
            br = _BlockReader(fh.read(), bag_path)
        if br.key("id") != bag_id:
            raise FormatError(f"{bag_path}: id does not match manifest entry {bag_id!r}")
        if int(br.key("instances")) != n:
            raise FormatError(f"{bag_path}: instance count mismatch with manifest")
        feats = br.array("features", (n, feature_dim), np.float32)
        n_edges = int(br.key("edges"))
        edges = np.zeros((0, 2), dtype=np.int64)
        if n_edges:
            rows = [tuple(int(v) for v in br.line().split(",")) for _ in range(n_edges)]
            edges = np.array(rows, dtype=np.int64)
        label_line = br.key("labels")
        bits = np.zeros(k_max)
        bits[k_annotated:] = 1.0
        if label_line:
            for name in label_line.split(","):
                if name not in name_to_index:
                    raise VocabMismatchError(
                        f"{bag_path}: unknown factor name {name!r}"
                    )
                k = name_to_index[name]
                if k >= k_annotated:
                    raise VocabMismatchError(
                        f"{bag_path}: {name!r} is not an annotated factor"
                    )
                bits[k] = 1.0
        bags.append(Bag(features=feats, edges=edges,
                        labels=WeakLabels(bits), id=bag_id))
    return LoadedDataset(bags=bags, vocab=vocab, k_objects=k_objects,
                         k_attributes=k_attributes, k_extra=k_extra)


_CONFIG_FIELDS = ("k_objects", "k_attributes", "k_extra", "alpha", "sigma_a",
                  "sigma", "beta", "rho", "max_iters", "tol", "seed")


def save_model(path: str, model: AppearanceModel,
               correlation: CorrelationMatrix, binary: bool = True) -> None:
    """Versioned container: config snapshot, vocab, means, variances, M."""
    with open(path, "wb") as fh:
        fh.write((MODEL_MAGIC + "\n").encode("ascii"))
        fh.write(f"version: {FORMAT_VERSION}\n".encode("ascii"))
        fh.write(f"feature_dim: {model.feature_dim}\n".encode("ascii"))
        for name in _CONFIG_FIELDS:
            fh.write(f"{name}: {getattr(model.config, name)!r}\n".encode("ascii"))
        fh.write(("vocab: " + ",".join(model.vocab) + "\n").encode("ascii"))
        _write_array(fh, "means", np.asarray(model.means, dtype=np.float64), binary)
        _write_array(fh, "variances",
                     np.asarray(model.variances, dtype=np.float64), binary)
        _write_array(fh, "correlation",
                     np.asarray(correlation.m, dtype=np.float64), binary)


def load_model(path: str) -> tuple[AppearanceModel, CorrelationMatrix]:
    with open(path, "rb") as fh:
        reader = _BlockReader(fh.read(), path)
    _check_version(reader, MODEL_MAGIC)
    feature_dim = int(reader.key("feature_dim"))
    raw = {name: reader.key(name) for name in _CONFIG_FIELDS}
    config = ModelConfig(
        k_objects=int(raw["k_objects"]),
        k_attributes=int(raw["k_attributes"]),
        k_extra=int(raw["k_extra"]),
        alpha=float(raw["alpha"]),
        sigma_a=float(raw["sigma_a"]),
        sigma=float(raw["sigma"]),
        beta=float(raw["beta"]),
        rho=float(raw["rho"]),
        max_iters=int(raw["max_iters"]),
        tol=float(raw["tol"]),
        seed=int(raw["seed"]),
    )
    vocab_line = reader.key("vocab")
    vocab = vocab_line.split(",") if vocab_line else []
    k = config.k_max
    if len(vocab) != k:
        raise VocabMismatchError(f"{path}: vocab length {len(vocab)} != k_max {k}")
    means = reader.array("means", (k, feature_dim), np.float64)
    variances = reader.array("variances", (k,), np.float64)
    m = reader.array("correlation", (k, k), np.float64)
    model = AppearanceModel(means=means, variances=variances,
                            vocab=vocab, config=config)
    model.validate()
    corr = CorrelationMatrix(m)
    corr.validate()
    return model, corr


def save_posteriors(path: str, posteriors: list[tuple[str, BagPosterior]],
                    k_max: int) -> None:
    with open(path, "wb") as fh:
        fh.write((POSTERIORS_MAGIC + "\n").encode("ascii"))
        fh.write(f"version: {FORMAT_VERSION}\n".encode("ascii"))
        fh.write(f"k_max: {k_max}\n".encode("ascii"))
        fh.write(f"num_bags: {len(posteriors)}\n".encode("ascii"))
        for bag_id, post in posteriors:
            fh.write(f"bag: {bag_id},{post.nu.shape[0]}\n".encode("ascii"))
            _write_array(fh, "tau", np.asarray(post.tau, dtype=np.float64), True)
            _write_array(fh, "nu", np.asarray(post.nu, dtype=np.float64), True)
            _write_array(fh, "logits",
                         np.asarray(post.logits, dtype=np.float64), True)


def load_posteriors(path: str) -> list[tuple[str, BagPosterior]]:
    with open(path, "rb") as fh:
        reader = _BlockReader(fh.read(), path)
    _check_version(reader, POSTERIORS_MAGIC)
    k_max = int(reader.key("k_max"))
    num_bags = int(reader.key("num_bags"))
    out = []
    for _ in range(num_bags):
        bag_id, n_str = reader.key("bag").split(",")
        n = int(n_str)
        tau = reader.array("tau", (k_max, 2), np.float64)
        nu = reader.array("nu", (n, k_max), np.float64)
        logits = reader.array("logits", (n, k_max), np.float64)
        out.append((bag_id, BagPosterior(tau=tau, nu=nu, logits=logits)))
    return out


def write_segmentation(path: str, seg: SegmentationMap, vocab: list[str],
                       raster: np.ndarray | None = None,
                       ppm_path: str | None = None) -> None:
    """Per-instance label CSV, plus an optional paletted P3 raster image."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("instance,label_index,label_name,score\n")
        for j, (k, s) in enumerate(zip(seg.labels, seg.scores)):
            fh.write(f"{j},{int(k)},{vocab[int(k)]},{float(s)!r}\n")
    if raster is None:
        return
    if ppm_path is None:
        ppm_path = path + ".ppm"
    raster = np.asarray(raster)
    if raster.min() < 0 or raster.max() >= len(seg.labels):
        raise DatasetError("raster references an unknown instance id")
    h, w = raster.shape
    with open(ppm_path, "w", encoding="ascii") as fh:
        fh.write(f"P3\n{w} {h}\n255\n")
        for row in raster:
            parts = []
            for inst in row:
                r, g, b = PALETTE[int(seg.labels[int(inst)]) % len(PALETTE)]
                parts.append(f"{r} {g} {b}")
            fh.write(" ".join(parts) + "\n")


def save_truth(path: str, true_z: list[np.ndarray], true_pi: list[np.ndarray],
               true_a: np.ndarray, bag_ids: list[str]) -> None:
    """Ground-truth sidecar for synthetic datasets (JSON)."""
    payload = {
        "bag_ids": bag_ids,
        "true_z": [z.tolist() for z in true_z],
        "true_pi": [p.tolist() for p in true_pi],
        "true_a": true_a.tolist(),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh)


def load_truth(path: str) -> dict:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    payload["true_z"] = [np.array(z) for z in payload["true_z"]]
    payload["true_pi"] = [np.array(p) for p in payload["true_pi"]]
    payload["true_a"] = np.array(payload["true_a"])
    return payload
