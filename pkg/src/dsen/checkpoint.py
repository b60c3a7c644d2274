"""Binary parameter checkpoints: versioned header with the architecture
dimensions, then named, length-prefixed little-endian float64 arrays.
Round-trips bitwise."""

from __future__ import annotations

import struct

import numpy as np

from .data import _Reader, _w_array, _w_text  # shared low-level format helpers
from .errors import DataFormatError, VersionError
from .model import ModelConfig
from .training import build_params

MAGIC = b"DSENCKPT"
FORMAT_VERSION = 1


def _config_header(cfg: ModelConfig) -> str:
    fields = [f"variant={cfg.variant}", f"d_s={cfg.d_s}", f"d_p={cfg.d_p}",
              f"t={cfg.t}", f"d_l={cfg.d_l}", f"gru_hidden={cfg.gru_hidden}",
              f"gru_layers={cfg.gru_layers}", f"views={cfg.views}",
              f"evo_hidden={cfg.evo_hidden}", f"attn_heads={cfg.attn_heads}",
              "mlp_hidden=" + ",".join(str(w) for w in cfg.mlp_hidden)]
    return "\n".join(fields)


def _parse_config(text: str) -> ModelConfig:
    fields = dict(line.split("=", 1) for line in text.split("\n"))
    return ModelConfig(
        variant=fields["variant"],
        d_s=int(fields["d_s"]), d_p=int(fields["d_p"]),
        t=int(fields["t"]), d_l=int(fields["d_l"]),
        gru_hidden=int(fields["gru_hidden"]), gru_layers=int(fields["gru_layers"]),
        views=int(fields["views"]), evo_hidden=int(fields["evo_hidden"]),
        attn_heads=int(fields["attn_heads"]),
        mlp_hidden=tuple(int(w) for w in fields["mlp_hidden"].split(",") if w))


def save_checkpoint(params, cfg: ModelConfig, path):
    tensors = params.tensors()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        _w_text(fh, _config_header(cfg))
        fh.write(struct.pack("<Q", len(tensors)))
        for name, t in tensors.items():
            _w_text(fh, name)
            _w_array(fh, t.data, "<f8")


def load_checkpoint(path):
    """Returns (params, ModelConfig) with the stored weights."""
    with open(path, "rb") as fh:
        r = _Reader(fh)
        magic = r.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"bad magic bytes at offset 0: {magic!r}")
        version = struct.unpack("<I", r.read(4))[0]
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}, "
                               f"expected {FORMAT_VERSION}")
        cfg = _parse_config(r.text())
        n = r.u64()
        arrays = {}
        for _ in range(n):
            name = r.text()
            arrays[name] = r.array("<f8")
    params = build_params(cfg, seed=0)
    tensors = params.tensors()
    if set(tensors) != set(arrays):
        raise DataFormatError("checkpoint tensor names do not match the "
                              f"{cfg.variant!r} architecture")
    for name, t in tensors.items():
        if arrays[name].shape != t.data.shape:
            raise DataFormatError(f"tensor {name!r} has shape {arrays[name].shape}, "
                                  f"expected {t.data.shape}")
        t.data = arrays[name]
    return params, cfg
