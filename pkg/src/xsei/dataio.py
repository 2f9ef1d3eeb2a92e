"""On-disk formats: window datasets and model checkpoints.

A dataset is a directory with ``manifest.json`` and one data file.  Two
encodings are supported:

``csv``  one row per sample: ``window_id,index,current,mask_flag``.
``bin``  little-endian; header ``b"XSEIWIN1"``, uint32 window count, then per
         window: uint32 window_id, uint32 n, float32[n] samples, uint32 span
         count, and (uint32 start, uint32 length) per masked span.

Samples are stored as float32, so a round trip is exact at float32 precision.

A checkpoint is ``b"XSEICKPT"``, uint32 format version, uint32 header length,
a UTF-8 JSON header, the float64 little-endian payload described by the
header, and a trailing SHA-256 digest of everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signal import CLASS_NAMES, ArcMask, SignalWindow

SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1
WIN_MAGIC = b"XSEIWIN1"
CKPT_MAGIC = b"XSEICKPT"


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    windows: list[SignalWindow]
    class_names: tuple[str, ...] = CLASS_NAMES
    sample_period_ms: float = 5e-3
    width: int = 10000
    step: int = 5000
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    def manifest(self, encoding: str, data_file: str) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "class_names": list(self.class_names),
            "sample_period_ms": self.sample_period_ms,
            "window": {"width": self.width, "step": self.step},
            "seeds": self.seeds,
            "encoding": encoding,
            "data_file": data_file,
            "windows": [{"id": i, "label": int(w.label), "length": len(w), "load": w.load,
                         "start": int(w.start)} for i, w in enumerate(self.windows)],
            "extra": self.extra,
        }


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def write_dataset(ds: Dataset, directory, encoding: str = "bin") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if encoding == "csv":
        data_file = "windows.csv"
        with open(directory / data_file, "w") as fh:
            fh.write("window_id,index,current,mask_flag\n")
            for wid, w in enumerate(ds.windows):
                values = w.samples.astype(np.float32)
                flags = w.arc_mask.flags
                fh.writelines(f"{wid},{i},{float(v)!r},{int(f)}\n"
                              for i, (v, f) in enumerate(zip(values.tolist(), flags)))
    elif encoding == "bin":
        data_file = "windows.bin"
        with open(directory / data_file, "wb") as fh:
            fh.write(WIN_MAGIC)
            fh.write(struct.pack("<I", len(ds.windows)))
            for wid, w in enumerate(ds.windows):
                fh.write(struct.pack("<II", wid, len(w)))
                fh.write(w.samples.astype("<f4").tobytes())
                spans = w.arc_mask.spans()
                fh.write(struct.pack("<I", len(spans)))
                for start, run in spans:
                    fh.write(struct.pack("<II", start, run))
    else:
        raise ValueError(f"unknown encoding {encoding!r}; use 'csv' or 'bin'")
    with open(directory / "manifest.json", "w") as fh:
        fh.write(_canonical_json(ds.manifest(encoding, data_file)) + "\n")
    return directory


def _validate_manifest(m: dict) -> None:
    if m.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"schema_version {m.get('schema_version')!r} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    if not m.get("sample_period_ms", 0) > 0:
        raise FormatError(f"manifest sample_period_ms must be > 0, got {m.get('sample_period_ms')!r}")
    if not m.get("class_names"):
        raise FormatError("manifest lists no class names")


def _read_bin(path, meta):
    blob = Path(path).read_bytes()
    if blob[:8] != WIN_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (count,) = struct.unpack_from("<I", blob, 8)
    if count != len(meta):
        raise FormatError(f"{path}: holds {count} windows, manifest lists {len(meta)}")
    off = 12
    out = []
    for rec in range(count):
        try:
            wid, n = struct.unpack_from("<II", blob, off)
            off += 8
            if n != meta[rec]["length"]:
                raise FormatError(f"record {rec}: length prefix {n} does not match manifest "
                                  f"length {meta[rec]['length']}")
            if off + 4 * n > len(blob):
                raise FormatError(f"record {rec}: length prefix {n} runs past end of file")
            samples = np.frombuffer(blob, dtype="<f4", count=n, offset=off).astype(np.float64)
            off += 4 * n
            (k,) = struct.unpack_from("<I", blob, off)
            off += 4
            spans = [struct.unpack_from("<II", blob, off + 8 * j) for j in range(k)]
            off += 8 * k
        except struct.error as exc:
            raise FormatError(f"record {rec}: truncated ({exc})") from None
        if wid != meta[rec]["id"]:
            raise FormatError(f"record {rec}: window id {wid} != manifest id {meta[rec]['id']}")
        try:
            mask = ArcMask.from_spans(n, spans)
        except ValueError as exc:
            raise FormatError(f"record {rec}: {exc}") from None
        out.append((samples, mask.flags))
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after record {count - 1}")
    return out


def _read_csv(path, meta):
    with open(path) as fh:
        if fh.readline().strip() != "window_id,index,current,mask_flag":
            raise FormatError(f"{path}: unexpected header")
        table = np.loadtxt(fh, delimiter=",", ndmin=2,
                           dtype=[("w", "i8"), ("i", "i8"), ("c", "f8"), ("m", "i8")])
    out = []
    ids = table["w"]
    for rec, entry in enumerate(meta):
        rows = table[ids == entry["id"]]
        if len(rows) != entry["length"]:
            raise FormatError(f"record {rec}: {len(rows)} samples, manifest says {entry['length']}")
        if not np.array_equal(rows["i"], np.arange(len(rows))):
            raise FormatError(f"record {rec}: sample indices are not 0..n-1 in order")
        out.append((rows["c"], rows["m"].astype(bool)))
    if len(table) != sum(e["length"] for e in meta):
        raise FormatError(f"{path}: rows for windows not listed in the manifest")
    return out


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{directory}: no manifest.json") from None
    _validate_manifest(manifest)
    meta = manifest["windows"]
    path = directory / manifest["data_file"]
    enc = manifest.get("encoding")
    if enc == "bin":
        records = _read_bin(path, meta)
    elif enc == "csv":
        records = _read_csv(path, meta)
    else:
        raise FormatError(f"unknown encoding {enc!r}")
    period = float(manifest["sample_period_ms"])
    n_classes = len(manifest["class_names"])
    windows = []
    for rec, ((samples, flags), entry) in enumerate(zip(records, meta)):
        if not np.all(np.isfinite(samples)):
            raise FormatError(f"record {rec}: non-finite sample")
        if not 0 <= entry["label"] < n_classes:
            raise FormatError(f"record {rec}: label {entry['label']} outside class list")
        windows.append(SignalWindow(samples, period, int(entry["label"]), ArcMask(flags),
                                    entry.get("load", ""), int(entry.get("start", 0))))
    return Dataset(windows, tuple(manifest["class_names"]), period, manifest["window"]["width"],
                   manifest["window"]["step"], manifest.get("seeds", {}), manifest.get("extra", {}))


# --- checkpoints -------------------------------------------------------------------------

def write_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    names = list(arrays)
    head = dict(header)
    head["arrays"] = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    head_bytes = json.dumps(head, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    body = CKPT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head_bytes)) + head_bytes + payload
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, 8)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version} is not supported")
    header = json.loads(body[16:16 + hlen])
    off = 16 + hlen
    arrays = {}
    for entry in header.pop("arrays"):
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=off).astype(
            np.float64).reshape(entry["shape"])
        off += 8 * count
    if off != len(body):
        raise FormatError(f"{path}: payload size does not match header")
    return header, arrays


def save_model(model, path) -> None:
    from .models import MODEL_CLASSES  # deferred: models imports signal/features only
    header, arrays = model.state()
    kind = "lbnn" if model.family == "raw_signal" else model.name
    if kind not in MODEL_CLASSES:
        raise ValueError(f"cannot checkpoint model kind {kind!r}")
    header = {"family": model.family, "kind": kind, "state": header}
    write_checkpoint(path, header, arrays)


def load_model(path):
    from .models import MODEL_CLASSES
    header, arrays = read_checkpoint(path)
    cls = MODEL_CLASSES[header["kind"]]
    model = cls.from_state(header["state"], arrays)
    if model.family != header["family"]:
        raise FormatError(f"{path}: family tag {header['family']!r} does not match {header['kind']!r}")
    return model
