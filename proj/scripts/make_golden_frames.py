"""Writes tests/golden/*.frame from the documented formats alone.

Frame: u32 big-endian body length, then the canonical JSON body.
Checkpoint: "DSC1", u32 version 1, u32 layer count, per layer (u32 name
length, name, u32 rank, u64 dims), u64 value count, f64 values; all
little-endian. Ring vectors: u64 count, then u64 values, little-endian.

Usage: python3 scripts/make_golden_frames.py tests/golden
"""
import base64
import json
import struct
import sys
from pathlib import Path


def checkpoint(layers, values):
    out = b"DSC1" + struct.pack("<II", 1, len(layers))
    for name, dims in layers:
        out += struct.pack("<I", len(name)) + name.encode() + struct.pack("<I", len(dims))
        out += b"".join(struct.pack("<Q", d) for d in dims)
    out += struct.pack("<Q", len(values)) + b"".join(struct.pack("<d", v) for v in values)
    return base64.b64encode(out).decode()


def ring(values):
    out = struct.pack("<Q", len(values)) + b"".join(struct.pack("<Q", v) for v in values)
    return base64.b64encode(out).decode()


def frame(fields):
    body = json.dumps(fields, separators=(",", ":")).encode()
    return struct.pack(">I", len(body)) + body


PARAMS = checkpoint([("out.bias", [2])], [0.5, -1.25])

FRAMES = {
    "join_task": {"protocolVersion": "1.0", "type": "JoinTask", "taskId": "t",
                  "capabilities": ["listen=127.0.0.1:9000"]},
    "update_upload": {"protocolVersion": "1.0", "type": "UpdateUpload", "taskId": "t", "sender": 3,
                      "round": 2, "payload": PARAMS, "sampleCount": 10},
    "peer_list": {"protocolVersion": "1.0", "type": "PeerList", "taskId": "t", "round": 1,
                  "peers": [{"clientId": 2, "address": "127.0.0.1:9001"}]},
    "peer_share": {"protocolVersion": "1.0", "type": "PeerShare", "taskId": "t", "sender": 2, "round": 1,
                   "stage": "share", "share": ring([1, 2**64 - 1]), "sampleCount": 5},
    "global_update": {"protocolVersion": "1.0", "type": "GlobalUpdate", "taskId": "t", "round": 2,
                      "params": PARAMS, "participantCount": 3},
    "metrics_report": {"protocolVersion": "1.0", "type": "MetricsReport", "taskId": "t", "sender": 1,
                       "round": 0, "epoch": 1, "loss": 0.5, "accuracy": 0.75},
    "error": {"protocolVersion": "1.0", "type": "Error", "taskId": "t", "code": "unknown-task",
              "detail": "no"},
    "leave": {"protocolVersion": "1.0", "type": "Leave", "taskId": "t"},
}


def main():
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    for name, fields in FRAMES.items():
        (out / f"{name}.frame").write_bytes(frame(fields))


if __name__ == "__main__":
    main()
