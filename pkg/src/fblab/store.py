"""Portable model files: text metadata, an array manifest and a raw float64 payload.

Layout::

    b"FBNFC"            magic
    uint16 LE           format version
    uint32 LE, bytes    metadata, UTF-8 ``key=value`` lines
    uint32 LE, bytes    manifest, UTF-8 lines ``name<TAB>d0,d1,...<TAB>offset``
    payload             float64 little-endian, row-major; offsets are bytes
                        from the start of the payload

Writing is deterministic, so equal models give byte-identical files.
"""
import io
import os
import struct

import numpy as np

MAGIC = b"FBNFC"
VERSION = 1
_DTYPE = np.dtype("<f8")


class ModelFormatError(ValueError):
    pass


def encode_model(metadata, arrays):
    """Serialise ``metadata`` (str -> str) and ``arrays`` (name -> ndarray) to bytes."""
    meta_lines = []
    for key, value in metadata.items():
        value = str(value)
        if "\n" in value or "=" in key or "\n" in key:
            raise ValueError(f"metadata entry {key!r} must be a single line")
        meta_lines.append(f"{key}={value}")
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        if "\t" in name or "\n" in name:
            raise ValueError(f"bad array name {name!r}")
        a = np.asarray(arr, dtype=_DTYPE, order="C")
        shape = ",".join(str(d) for d in a.shape)
        manifest.append(f"{name}\t{shape}\t{offset}")
        chunks.append(a.tobytes(order="C"))
        offset += a.nbytes
    meta = "\n".join(meta_lines).encode("utf-8")
    man = "\n".join(manifest).encode("utf-8")
    head = MAGIC + struct.pack("<H", VERSION)
    head += struct.pack("<I", len(meta)) + meta + struct.pack("<I", len(man)) + man
    return head + b"".join(chunks)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError(f"truncated model file while reading {what}")
    return data


def _parse_header(fh):
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {VERSION})")
    (n_meta,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
    meta = {}
    for line in _read_exact(fh, n_meta, "metadata").decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    (n_man,) = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
    manifest = []
    for line in _read_exact(fh, n_man, "manifest").decode("utf-8").splitlines():
        name, shape, offset = line.split("\t")
        dims = tuple(int(d) for d in shape.split(",")) if shape else ()
        manifest.append((name, dims, int(offset)))
    return meta, manifest


def decode_model(data):
    """Inverse of :func:`encode_model`: ``(metadata, arrays)``."""
    fh = io.BytesIO(data)
    meta, manifest = _parse_header(fh)
    payload = data[fh.tell():]
    arrays = {}
    expected = 0
    for name, shape, offset in manifest:
        if name in arrays:
            raise ModelFormatError(f"array {name!r} listed twice in manifest")
        if offset != expected:
            raise ModelFormatError(f"array {name!r} at offset {offset}, expected {expected}")
        n = int(np.prod(shape)) * _DTYPE.itemsize
        if offset + n > len(payload):
            raise ModelFormatError(f"array {name!r} runs past the end of the payload")
        arrays[name] = np.frombuffer(payload, dtype=_DTYPE, count=n // 8, offset=offset).reshape(shape).copy()
        expected = offset + n
    if expected != len(payload):
        raise ModelFormatError(f"{len(payload) - expected} trailing payload bytes")
    return meta, arrays


def read_header(path):
    """Metadata and manifest only; the payload is not read."""
    with open(path, "rb") as fh:
        return _parse_header(fh)


def save_arrays(path, metadata, arrays):
    data = encode_model(metadata, arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_arrays(path):
    with open(path, "rb") as fh:
        _parse_header(fh)  # fail on magic/version before pulling in the payload
        fh.seek(0)
        return decode_model(fh.read())


# ------------------------------------------------------------ codes

def code_metadata(code, epoch=None):
    from fblab.config import format_config

    meta = {"kind": code.kind}
    for line in format_config(code.config).splitlines():
        key, _, value = line.partition("=")
        meta[f"config.{key}"] = value
    if epoch is not None:
        meta["epoch"] = str(epoch)
    return meta


def save_code(path, code, epoch=None):
    """Write a neural or learned-linear code with its full configuration."""
    save_arrays(path, code_metadata(code, epoch), code.state_arrays())


def load_code(path):
    """Rebuild a code from a model file; the manifest must match the model exactly."""
    from fblab.baselines import LinearFeedbackCode
    from fblab.config import parse_config
    from fblab.trainer import FeedbackCode

    meta, arrays = load_arrays(path)
    kind = meta.get("kind")
    classes = {"neural": FeedbackCode, "linear": LinearFeedbackCode}
    if kind not in classes:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    text = "\n".join(f"{k[len('config.'):]}={v}" for k, v in meta.items() if k.startswith("config."))
    config, _ = parse_config(text, source=str(path))
    code = classes[kind].init(config)
    expected = set(code.state_arrays())
    frozen = {n for n in arrays if n.endswith(("norm_mean", "norm_var"))}
    missing = expected - set(arrays)
    extra = set(arrays) - expected - frozen
    if missing or extra:
        raise ModelFormatError(f"manifest mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, arr in arrays.items():
        ref = code.state_arrays().get(name)
        if ref is not None and ref.shape != arr.shape:
            raise ModelFormatError(f"array {name!r} has shape {arr.shape}, model expects {ref.shape}")
    code.load_state(arrays)
    return code, meta
