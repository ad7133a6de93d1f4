"""Versioned binary checkpoints.

Layout: the 8-byte magic ``MOBGCN\\x00\\x01``, a little-endian uint64 header
length, a UTF-8 JSON header (sorted keys), then every array from the header's
``fields`` list in order as little-endian float64. Identical networks produce
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .mobius import MobiusBlockParams, MobiusNetwork
from .skeleton import SkeletonTopology, parse_topology
from .training import NormalizationStats

MAGIC = b"MOBGCN\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


class TopologyMismatchError(CheckpointError):
    def __init__(self, expected: str, found: str):
        super().__init__(f"topology hash mismatch: checkpoint has {found}, expected {expected}")
        self.expected = expected
        self.found = found


def _fields(net: MobiusNetwork, stats: NormalizationStats | None):
    out = list(net.named_parameters())
    if stats is not None:
        out += [
            ("norm.input_offset", stats.input_offset),
            ("norm.input_scale", np.array([stats.input_scale])),
            ("norm.output_scale", np.array([stats.output_scale])),
            ("norm.bone_lengths", stats.bone_lengths),
        ]
    return out


def dumps_checkpoint(net: MobiusNetwork, stats: NormalizationStats | None = None) -> bytes:
    fields = _fields(net, stats)
    header = {
        "format": "mobiusgcn-checkpoint",
        "version": VERSION,
        "topology_hash": net.topology.hash(),
        "topology": net.topology.dumps(),
        "widths": list(net.widths),
        "center_of_mass": bool(net.center_of_mass),
        "activations": [blk.activation for blk in net.blocks],
        "fields": [[name, list(np.shape(arr))] for name, arr in fields],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(head)), head]
    parts += [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in fields]
    return b"".join(parts)


def save_checkpoint(path, net: MobiusNetwork, stats: NormalizationStats | None = None) -> None:
    Path(path).write_bytes(dumps_checkpoint(net, stats))


def read_header(path) -> dict:
    return _split(Path(path).read_bytes())[0]


def _split(blob: bytes):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a mobiusgcn checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    return header, blob[16 + n:]


def loads_checkpoint(blob: bytes, topology: SkeletonTopology | None = None):
    """Return ``(net, stats)``; ``stats`` is None when the checkpoint has none.

    With ``topology`` given, a differing topology hash is refused.
    """
    header, body = _split(blob)
    found = header["topology_hash"]
    if topology is not None and topology.hash() != found:
        raise TopologyMismatchError(topology.hash(), found)
    topo = parse_topology(header["topology"])
    if topo.hash() != found:
        raise CheckpointError("embedded topology does not match its recorded hash")
    arrays = {}
    offset = 0
    for name, shape in header["fields"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CheckpointError(f"checkpoint truncated while reading {name}")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError("trailing bytes after the last field")
    blocks = []
    for k, act in enumerate(header["activations"]):
        blocks.append(MobiusBlockParams(
            *(arrays[f"block{k}.{f}"] for f in MobiusBlockParams.FIELDS), activation=act,
        ))
    net = MobiusNetwork(topo, header["widths"], blocks, header["center_of_mass"])
    stats = None
    if "norm.input_offset" in arrays:
        stats = NormalizationStats(
            arrays["norm.input_offset"],
            float(arrays["norm.input_scale"][0]),
            float(arrays["norm.output_scale"][0]),
            arrays["norm.bone_lengths"],
        )
    return net, stats


def load_checkpoint(path, topology: SkeletonTopology | None = None):
    return loads_checkpoint(Path(path).read_bytes(), topology)
