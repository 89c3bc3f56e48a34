"""Versioned, self-describing checkpoint container.

Byte layout (all integers little-endian, all text UTF-8):

    1. Header: newline-terminated text lines, ended by one blank line.
         line 1:      "MSDEBLUR-CKPT 1"          (magic + format version)
         lines 2..n:  "key=value" pairs: fingerprint, stage, epoch, step
    2. Index length: 8-byte unsigned integer.
    3. Index: JSON array of {"name", "dtype", "shape", "offset", "nbytes"},
       offsets relative to the start of the data region.
    4. Data region: raw C-order array bytes, concatenated in index order.

Block names: "model/<param>" for model tensors, "adam/<param>/exp_avg",
"adam/<param>/exp_avg_sq", "adam/<param>/step" for optimizer moments,
"rng/torch" (uint8 state), "rng/data" (uint8 JSON bytes), and "json/config"
(uint8 JSON bytes of the model-config dict).

The writer is fully deterministic: saving, loading, and saving again yields a
byte-identical file.
"""

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = "MSDEBLUR-CKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint or checkpoint/config mismatch."""


def _to_array(t):
    return t.detach().cpu().contiguous().numpy()


def save_checkpoint(path, model_state, config_dict, stage, epoch, step,
                    optimizer_blocks=None, rng_blocks=None, extra_json=None):
    """Write a checkpoint. `model_state` is a name->tensor mapping,
    `optimizer_blocks` a name->tensor/scalar mapping already namespaced under
    "adam/", `rng_blocks` a name->bytes mapping."""
    from .config import config_fingerprint

    blocks = []
    for name, tensor in model_state.items():
        blocks.append((f"model/{name}", _to_array(tensor)))
    for name, value in (optimizer_blocks or {}).items():
        arr = _to_array(value) if isinstance(value, torch.Tensor) else np.asarray(value)
        blocks.append((name, arr))
    for name, raw in (rng_blocks or {}).items():
        blocks.append((name, np.frombuffer(raw, dtype=np.uint8)))
    cfg_bytes = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    blocks.append(("json/config", np.frombuffer(cfg_bytes, dtype=np.uint8)))
    if extra_json is not None:
        raw = json.dumps(extra_json, sort_keys=True).encode("utf-8")
        blocks.append(("json/extra", np.frombuffer(raw, dtype=np.uint8)))

    header = (
        f"{MAGIC} {FORMAT_VERSION}\n"
        f"fingerprint={config_fingerprint(config_dict)}\n"
        f"stage={stage}\n"
        f"epoch={epoch}\n"
        f"step={step}\n"
        "\n"
    ).encode("utf-8")

    index = []
    offset = 0
    for name, arr in blocks:
        nbytes = arr.nbytes
        index.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape),
             "offset": offset, "nbytes": nbytes}
        )
        offset += nbytes
    index_bytes = json.dumps(index).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", len(index_bytes)))
        fh.write(index_bytes)
        for _, arr in blocks:
            fh.write(arr.tobytes())
    return path


def load_checkpoint(path):
    """Read a checkpoint into (meta dict, blocks dict of numpy arrays)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()

    end = raw.find(b"\n\n")
    if end < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    lines = raw[:end].decode("utf-8").split("\n")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if int(magic[1]) != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {magic[1]}")
    meta = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        meta[key] = value
    for key in ("stage", "epoch", "step"):
        meta[key] = int(meta[key])

    body = raw[end + 2 :]
    (index_len,) = struct.unpack_from("<Q", body, 0)
    index = json.loads(body[8 : 8 + index_len].decode("utf-8"))
    data = body[8 + index_len :]

    blocks = {}
    for entry in index:
        arr = np.frombuffer(
            data, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"], dtype=np.int64)),
            offset=entry["offset"],
        ).reshape(entry["shape"])
        blocks[entry["name"]] = arr
    return meta, blocks


def checkpoint_config(blocks):
    """Model-config dict stored in a checkpoint."""
    if "json/config" not in blocks:
        raise CheckpointError("checkpoint has no stored config")
    return json.loads(bytes(blocks["json/config"]).decode("utf-8"))


def verify_config(blocks, expected_dict):
    """Raise CheckpointError naming the first differing config key."""
    stored = checkpoint_config(blocks)
    for key in sorted(set(stored) | set(expected_dict)):
        a, b = stored.get(key), expected_dict.get(key)
        if a != b:
            raise CheckpointError(
                f"checkpoint config mismatch at key {key!r}: checkpoint has {a!r}, expected {b!r}"
            )


def load_model_state(blocks):
    """Extract the model state dict (name -> torch tensor) from blocks."""
    state = {}
    for name, arr in blocks.items():
        if name.startswith("model/"):
            state[name[len("model/") :]] = torch.from_numpy(arr.copy())
    return state
