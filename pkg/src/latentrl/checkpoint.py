"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes   b"LRCKPT\\x00\\x01"
    hlen     u64       length of the header in bytes
    header   hlen      UTF-8 JSON, sorted keys: {"format", "config", "arrays", "meta"}
    payload  ...       float64 little-endian arrays, back to back
    digest   32 bytes  SHA-256 of everything above

``arrays`` lists ``{"name", "shape", "offset", "count"}`` with offsets in
elements from the start of the payload. Names are namespaced: ``policy/``,
``optim/m/``, ``optim/v/``, ``scorer/`` and ``frozen/`` (the decoder, whose
checksum is stored in ``meta.decoder_checksum`` and re-verified on load).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RunConfig
from .decoder import FrozenDecoder, LatentScorer
from .errors import ChecksumError, ShapeError
from .objective import AdamState
from .policy import PARAM_NAMES, PolicyParams

MAGIC = b"LRCKPT\x00\x01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: PolicyParams
    scorer: LatentScorer
    optimizer_state: AdamState
    decoder: FrozenDecoder
    config: RunConfig


def _named_arrays(params, scorer, state, decoder) -> list[tuple[str, np.ndarray]]:
    out = [(f"policy/{n}", params.arrays[n]) for n in PARAM_NAMES]
    for n in PARAM_NAMES:
        if n in state.m:
            out.append((f"optim/m/{n}", state.m[n]))
            out.append((f"optim/v/{n}", state.v[n]))
    out.append(("scorer/weights", scorer.weights))
    out.append(("scorer/bias", np.array([scorer.bias])))
    out.append(("frozen/readout", decoder.readout))
    out.append(("frozen/bias", decoder.bias))
    return out


def encode_checkpoint(params: PolicyParams, scorer: LatentScorer, state: AdamState,
                      decoder: FrozenDecoder, config: RunConfig) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in _named_arrays(params, scorer, state, decoder):
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    header = {
        "format": FORMAT_VERSION,
        "config": config.to_dict(),
        "arrays": entries,
        "meta": {
            "adam_step": state.step,
            "decoder_checksum": decoder.checksum,
            "decoder_gate_index": decoder.gate_index,
        },
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(params, scorer, optimizer_state, decoder, path, config: RunConfig) -> Path:
    path = Path(path)
    data = encode_checkpoint(params, scorer, optimizer_state, decoder, config)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def decode_checkpoint(data: bytes, config: RunConfig | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + 32 or data[: len(MAGIC)] != MAGIC:
        raise ChecksumError("not a checkpoint container or truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checkpoint digest mismatch (corrupt or truncated file)")
    (hlen,) = struct.unpack("<Q", body[len(MAGIC): len(MAGIC) + 8])
    hstart = len(MAGIC) + 8
    header = json.loads(body[hstart: hstart + hlen].decode("utf-8"))
    payload = np.frombuffer(body[hstart + hlen:], dtype="<f8")
    arrays = {}
    for e in header["arrays"]:
        flat = payload[e["offset"]: e["offset"] + e["count"]]
        if flat.size != e["count"]:
            raise ChecksumError(f"array {e['name']} runs past the payload")
        arrays[e["name"]] = flat.reshape(e["shape"]).astype(np.float64)

    stored = RunConfig.from_dict(header["config"])
    if config is not None:
        for key in ("d", "T", "embed_dim", "hidden", "modulus"):
            if getattr(stored, key) != getattr(config, key):
                raise ShapeError(f"checkpoint {key}={getattr(stored, key)} does not match config {key}={getattr(config, key)}")
    meta = header["meta"]
    decoder = FrozenDecoder(arrays["frozen/readout"], arrays["frozen/bias"], int(meta["decoder_gate_index"]))
    if decoder.checksum != meta["decoder_checksum"]:
        raise ChecksumError("frozen decoder parameters do not match their stored checksum")
    params = PolicyParams(stored.embed_dim, stored.hidden, stored.T, stored.d, stored.sigma_min,
                          stored.sigma_max, {n: arrays[f"policy/{n}"] for n in PARAM_NAMES})
    state = AdamState(int(meta["adam_step"]),
                      {n: arrays[f"optim/m/{n}"] for n in PARAM_NAMES if f"optim/m/{n}" in arrays},
                      {n: arrays[f"optim/v/{n}"] for n in PARAM_NAMES if f"optim/v/{n}" in arrays})
    scorer = LatentScorer(arrays["scorer/weights"], float(arrays["scorer/bias"][0]))
    return Checkpoint(params, scorer, state, decoder, stored)


def load_checkpoint(path, config: RunConfig | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode_checkpoint(data, config)
