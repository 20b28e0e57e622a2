"""File formats: the binary container, FSL bval/bvec text, and reports.

Container layout: 8 magic bytes ``DSHORE01``, an unsigned little-endian
32-bit header length, a UTF-8 JSON header, then the payload as
little-endian 32-bit floats, row-major, segment by segment in header
order. The header declares the kind (dataset, coeffs, model or report),
the dtype tag ``f32le``, every segment's name and shape, and free-form
metadata (scale, orders, seeds, config echo). Headers are serialized
with sorted keys so identical content produces identical bytes.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContainerFormatError, InvalidArgumentError
from .net import MlpArchitecture, MlpModel
from .phantom import PhantomDataset
from .shore import QSpaceSamples
from .sphere import DirectionSet

MAGIC = b"DSHORE01"
KINDS = ("dataset", "coeffs", "model", "report")


@dataclass
class Container:
    kind: str
    metadata: dict
    segments: dict  # name -> float32 ndarray


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, kind, segments, metadata=None):
    """Write a container; `segments` is an ordered list of (name, array)."""
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown container kind {kind!r}")
    header = {
        "kind": kind,
        "dtype": "f32le",
        "segments": [
            {"name": name, "shape": list(np.asarray(arr).shape)}
            for name, arr in segments
        ],
        "meta": metadata or {},
    }
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in segments:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(path):
    """Read and validate a container file."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ContainerFormatError(f"bad magic {magic!r} in {path}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise ContainerFormatError("truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise ContainerFormatError("truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerFormatError(f"invalid header JSON: {exc}") from exc
        kind = header.get("kind")
        if kind not in KINDS:
            raise ContainerFormatError(f"unknown container kind {kind!r}")
        if header.get("dtype") != "f32le":
            raise ContainerFormatError(f"unsupported dtype {header.get('dtype')!r}")
        payload = fh.read()

    segments = {}
    offset = 0
    for entry in header.get("segments", []):
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ContainerFormatError(
                f"segment {entry['name']!r} declares {nbytes} bytes, "
                f"only {len(chunk)} available"
            )
        segments[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise ContainerFormatError(
            f"payload has {len(payload) - offset} undeclared trailing bytes"
        )
    return Container(kind=kind, metadata=header.get("meta", {}), segments=segments)


def write_dataset(path, dataset):
    """Persist a phantom dataset (kind ``dataset``)."""
    meta = {
        "sh_order": dataset.sh_order,
        "n_blocks": int(np.unique(dataset.block_ids).size),
    }
    if dataset.config is not None:
        cfg = dataset.config
        meta["phantom_config"] = {
            "shell_bvalues": list(cfg.shell_bvalues),
            "directions_per_shell": cfg.directions_per_shell,
            "crossing_angle_range": list(cfg.crossing_angle_range),
            "fraction_range": list(cfg.fraction_range),
            "kappa_watson": cfg.kappa_watson,
            "snr": "inf" if np.isinf(cfg.snr) else cfg.snr,
            "n_voxels": cfg.n_voxels,
            "rotations_per_voxel": cfg.rotations_per_voxel,
            "max_fibers": cfg.max_fibers,
            "sh_order": cfg.sh_order,
            "seed": cfg.seed,
            "eigenvalues": list(cfg.eigenvalues),
        }
    segments = [
        ("signals", dataset.signals),
        ("bvalues", dataset.samples.bvalues),
        ("directions", dataset.samples.directions.vectors),
        ("fod_coeffs", dataset.fod_coeffs),
        ("block_ids", dataset.block_ids.astype(float)),
    ]
    write_container(path, "dataset", segments, meta)


def read_dataset(path):
    box = read_container(path)
    if box.kind != "dataset":
        raise ContainerFormatError(f"expected a dataset container, got {box.kind!r}")
    needed = {"signals", "bvalues", "directions", "fod_coeffs", "block_ids"}
    missing = needed - box.segments.keys()
    if missing:
        raise ContainerFormatError(f"dataset container missing segments {sorted(missing)}")
    samples = QSpaceSamples(
        box.segments["bvalues"].astype(float),
        DirectionSet.normalized(box.segments["directions"].astype(float)),
    )
    return PhantomDataset(
        signals=box.segments["signals"].astype(float),
        samples=samples,
        fod_coeffs=box.segments["fod_coeffs"].astype(float),
        sh_order=int(box.metadata["sh_order"]),
        block_ids=np.rint(box.segments["block_ids"]).astype(int),
        config=None,
    )


def write_coeffs(path, coeffs, metadata):
    """Persist a coefficient matrix (kind ``coeffs``).

    The metadata records what the rows are: representation ("shore" or
    "sh"), radial_order and zeta for shore, sh_order for sh, plus any
    block ids needed to keep fold bookkeeping with the coefficients.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2:
        raise InvalidArgumentError("coefficient payload must be 2-D")
    segments = [("coeffs", coeffs)]
    meta = dict(metadata)
    block_ids = meta.pop("block_ids", None)
    if block_ids is not None:
        segments.append(("block_ids", np.asarray(block_ids, dtype=float)))
    write_container(path, "coeffs", segments, meta)


def read_coeffs(path):
    box = read_container(path)
    if box.kind != "coeffs":
        raise ContainerFormatError(f"expected a coeffs container, got {box.kind!r}")
    if "coeffs" not in box.segments:
        raise ContainerFormatError("coeffs container has no 'coeffs' segment")
    coeffs = box.segments["coeffs"].astype(float)
    meta = dict(box.metadata)
    if "block_ids" in box.segments:
        meta["block_ids"] = np.rint(box.segments["block_ids"]).astype(int)
    return coeffs, meta


def write_model(path, model):
    """Persist a network (kind ``model``): weights layer-major, bias after matrix."""
    meta = {
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "hidden": list(model.architecture.hidden),
        "activation": "elu",
        "residual": {"from_hidden": 2, "into_hidden": 4},
        "init_seed": model.seed,
        "layer_shapes": [list(w.shape) for w in model.weights],
    }
    segments = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        segments.append((f"w{i + 1}", w))
        segments.append((f"b{i + 1}", b))
    write_container(path, "model", segments, meta)


def read_model(path):
    box = read_container(path)
    if box.kind != "model":
        raise ContainerFormatError(f"expected a model container, got {box.kind!r}")
    arch = MlpArchitecture(int(box.metadata["input_dim"]), int(box.metadata["output_dim"]))
    weights = []
    biases = []
    for i in range(6):
        try:
            weights.append(box.segments[f"w{i + 1}"].astype(float))
            biases.append(box.segments[f"b{i + 1}"].astype(float))
        except KeyError as exc:
            raise ContainerFormatError(f"model container missing layer {i + 1}") from exc
    return MlpModel(arch, weights, biases, seed=box.metadata.get("init_seed"))


def write_report(path, report):
    """Write a report as canonical JSON (sorted keys, 2-space indent).

    Reruns with identical inputs produce identical files except for the
    separate ``created_at`` field.
    """
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_report_container(path, report, acc_arrays):
    """Report as a container: JSON metadata plus per-method ACC payloads."""
    segments = [(name, np.asarray(values, dtype=float)) for name, values in acc_arrays]
    write_container(path, "report", segments, report)


def write_bvals_bvecs(bval_path, bvec_path, samples):
    """FSL-style gradient table: b-values on one line, vectors on three."""
    with open(bval_path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(f"{b:.6g}" for b in samples.bvalues) + "\n")
    write_directions_text(bvec_path, samples.directions)


def read_bvals_bvecs(bval_path, bvec_path):
    bvalues = np.loadtxt(bval_path).reshape(-1)
    directions = read_directions_text(bvec_path)
    return QSpaceSamples(bvalues, directions)


def write_directions_text(path, dirs):
    """Three whitespace-separated lines (x, y, z), one column per direction."""
    with open(path, "w", encoding="utf-8") as fh:
        for axis in range(3):
            fh.write(" ".join(f"{v:.17g}" for v in dirs.vectors[:, axis]) + "\n")


def read_directions_text(path):
    rows = np.loadtxt(path)
    if rows.ndim == 1:
        rows = rows.reshape(3, -1)
    if rows.shape[0] != 3:
        raise ContainerFormatError(
            f"direction text must have three rows (x, y, z), got {rows.shape}"
        )
    return DirectionSet.normalized(rows.T)
