#!/usr/bin/env python3
"""Convert VGG-19 convolution weights into the migan weights container.

Input is either a torchvision state_dict (``.pth``/``.pt``, needs torch) or an
``.npz`` archive. In both cases the sixteen convolutions are taken in network
order from keys ``features.<n>.weight`` / ``features.<n>.bias``; an npz may
instead use the container's own ``block<b>.conv<i>.kernel|bias`` names.
Kernels must be laid out as (out, in, kh, kw).

Container layout: ``MIGANARC``, u32 LE version, u64 LE header length, JSON
header, then every tensor as little-endian f64 in header order. The header
records the SHA-256 of the payload.
"""

import argparse
import hashlib
import json
import re
import struct
import sys

import numpy as np

CONVS_PER_BLOCK = [2, 2, 4, 4, 4]
KIND = "migan-vgg19-weights"
VERSION = 1


def load_state(path):
    if path.endswith(".npz"):
        with np.load(path) as z:
            return {k: np.asarray(z[k]) for k in z.files}
    import torch

    state = torch.load(path, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    return {k: v.detach().cpu().numpy() for k, v in state.items()}


def ordered_convs(state):
    if "block1.conv1.kernel" in state:
        out = []
        for b, count in enumerate(CONVS_PER_BLOCK, 1):
            for i in range(1, count + 1):
                out.append((state[f"block{b}.conv{i}.kernel"], state[f"block{b}.conv{i}.bias"]))
        return out
    pat = re.compile(r"^features\.(\d+)\.weight$")
    idx = sorted(int(m.group(1)) for k in state if (m := pat.match(k)))
    return [(state[f"features.{n}.weight"], state[f"features.{n}.bias"]) for n in idx]


def named_tensors(state):
    convs = ordered_convs(state)
    if len(convs) != sum(CONVS_PER_BLOCK):
        sys.exit(f"expected {sum(CONVS_PER_BLOCK)} convolutions, found {len(convs)}")
    out, it, cin = [], iter(convs), 3
    for b, count in enumerate(CONVS_PER_BLOCK, 1):
        for i in range(1, count + 1):
            w, bias = next(it)
            if w.ndim != 4 or w.shape[1] != cin or w.shape[2:] != (3, 3) or bias.shape != (w.shape[0],):
                sys.exit(f"block{b}.conv{i}: kernel {w.shape} / bias {bias.shape} does not chain from {cin} channels")
            cin = w.shape[0]
            out.append((f"block{b}.conv{i}.kernel", w.astype("<f8")))
            out.append((f"block{b}.conv{i}.bias", bias.astype("<f8")))
    return out


def write_container(path, tensors, source):
    entries, chunks, offset = [], [], 0
    for name, t in tensors:
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size
        chunks.append(np.ascontiguousarray(t).tobytes())
    payload = b"".join(chunks)
    header = {
        "kind": KIND,
        "meta": {"layout": "out,in,kh,kw", "source": source},
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(b"MIGANARC")
        f.write(struct.pack("<IQ", VERSION, len(head)))
        f.write(head)
        f.write(payload)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", help="torchvision state_dict (.pth/.pt) or .npz")
    ap.add_argument("output", help="destination weights file")
    ap.add_argument("--source", default=None, help="provenance string stored in the header")
    a = ap.parse_args()
    tensors = named_tensors(load_state(a.input))
    write_container(a.output, tensors, a.source or a.input)
    print(f"wrote {len(tensors)} tensors to {a.output}")


if __name__ == "__main__":
    main()
