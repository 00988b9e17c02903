"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"MTBCACKP"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length N
    offset 16  N bytes   UTF-8 JSON header
    16 + N     ...       payload: float32 LE arrays, back to back

The JSON header holds ``model_config``, free-form ``meta`` (class names, DSP
config, ...) and a ``tensors`` table of ``{name, shape, offset, nbytes,
crc32}`` where ``offset`` is relative to the payload start. Tensor names are
the model's parameter names, ``block{i}.bn.running_mean``/``running_var`` for
BatchNorm statistics, ``block{i}.bn.initialized`` (0/1 scalar: statistics
already seeded from data) and ``uncertainty.s_cls``/``uncertainty.s_recon``.
"""

import json
import struct
import zlib

import numpy as np

from .errors import CheckpointError
from .model import MTBCACNN, ModelConfig

MAGIC = b"MTBCACKP"
VERSION = 1


def encode_checkpoint(model, uncertainty=None, meta=None):
    tensors = dict(model.state_dict())
    if uncertainty is not None:
        tensors.update({f"uncertainty.{k}": v.data for k, v in uncertainty.tensors().items()})
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append(
            {"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw), "crc32": zlib.crc32(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "model_config": model.config.to_dict(),
        "meta": meta or {},
        "tensors": table,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(path, model, uncertainty=None, meta=None):
    blob = encode_checkpoint(model, uncertainty, meta)
    with open(path, "wb") as fh:
        fh.write(blob)


def decode_checkpoint(blob):
    """Parse bytes into ``(header, {name: float32 array})`` or raise CheckpointError."""
    if len(blob) < 16:
        raise CheckpointError("file shorter than the 16-byte preamble", "preamble")
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file", "magic")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {VERSION})", "version")
    if 16 + hlen > len(blob):
        raise CheckpointError("header runs past end of file", "header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
        table = header["tensors"]
        header["model_config"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable header ({exc})", "header") from None
    payload = memoryview(blob)[16 + hlen :]
    arrays = {}
    for entry in table:
        name = entry.get("name", "?")
        try:
            start, nbytes, shape = int(entry["offset"]), int(entry["nbytes"]), tuple(entry["shape"])
        except (KeyError, TypeError, ValueError):
            raise CheckpointError("malformed tensor table entry", name) from None
        if start + nbytes > len(payload):
            raise CheckpointError(
                f"payload truncated: needs bytes {start}..{start + nbytes}, have {len(payload)}", name
            )
        raw = bytes(payload[start : start + nbytes])
        if zlib.crc32(raw) != entry.get("crc32"):
            raise CheckpointError("checksum mismatch; payload corrupt", name)
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"byte count {nbytes} does not match shape {list(shape)}", name)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return header, arrays


def load_checkpoint(path):
    """Rebuild ``(model, uncertainty_or_None, meta)`` from a checkpoint file."""
    from .train import UncertaintyWeights

    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(str(exc), "file") from None
    header, arrays = decode_checkpoint(blob)
    try:
        config = ModelConfig.from_dict(header["model_config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid model config ({exc})", "model_config") from None
    model = MTBCACNN(config, dtype=np.float32)
    state = {k: v for k, v in arrays.items() if not k.startswith("uncertainty.")}
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc), "tensors") from None
    uw = None
    if "uncertainty.s_cls" in arrays:
        uw = UncertaintyWeights.create(
            float(arrays["uncertainty.s_cls"]), float(arrays.get("uncertainty.s_recon", np.float32(0.0)))
        )
    model.eval()
    return model, uw, header.get("meta", {})
