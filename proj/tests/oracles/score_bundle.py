#!/usr/bin/env python3
"""Recompute layer importance from a captured bundle with numpy and compare it
against `lsaq importance`.

The container is parsed here from scratch (no shared code with the C++ reader),
projections are done in float64, and a Jaccard sample is only compared exactly
when the k-th and (k+1)-th logits are separated by more than float32 noise.
"""
import json
import struct
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

DTYPES = {"F32": np.float32, "F16": np.float16}


def read_store(path):
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + n])
    base = 8 + n
    out = {}
    for name, e in header.items():
        if name == "__metadata__":
            continue
        lo, hi = e["data_offsets"]
        arr = np.frombuffer(raw[base + lo : base + hi], dtype=DTYPES[e["dtype"]])
        out[name] = arr.reshape(e["shape"]).astype(np.float64)
    return out


def topk(logits, k):
    # Stable sort on -logit keeps the lower index first among ties.
    return set(np.argsort(-logits, kind="stable")[:k].tolist())


def ambiguous(logits, k):
    s = np.sort(logits)[::-1]
    if k >= len(s):
        return False
    return abs(s[k - 1] - s[k]) <= 1e-5 * max(1.0, abs(s[k - 1]))


def main():
    lsaq, k = sys.argv[1], 10
    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        w, b = tmp / "w.safetensors", tmp / "b.safetensors"
        subprocess.run([lsaq, "capture-toy", "--seed", "11", "--samples", "4", "--weights", str(w),
                        "--bundle", str(b)], check=True, stdout=subprocess.DEVNULL)
        tensors = read_store(b)
        emb = tensors["embed.W_E"]
        layers = 1 + max(int(n.split(".")[1]) for n in tensors if n.startswith("layer."))
        samples = 1 + max(int(n.split(".")[-1]) for n in tensors if n.startswith("layer."))

        for metric in ("jaccard", "cosine"):
            rep = tmp / f"{metric}.json"
            subprocess.run([lsaq, "importance", "--bundle", str(b), "--metric", metric, "--k", str(k),
                            "--out", str(rep)], check=True, stdout=subprocess.DEVNULL)
            got = json.loads(rep.read_text())
            scores = {s["layer"]: s["score"] for s in got["scores"]}
            for layer in range(layers):
                vals, exact = [], True
                for s in range(samples):
                    x = tensors[f"layer.{layer}.in.sample.{s}"]
                    y = tensors[f"layer.{layer}.out.sample.{s}"]
                    if metric == "jaccard":
                        lx, ly = emb @ x, emb @ y
                        exact &= not (ambiguous(lx, k) or ambiguous(ly, k))
                        a, c = topk(lx, k), topk(ly, k)
                        vals.append(1.0 - len(a & c) / len(a | c))
                    else:
                        cos = float(x @ y / np.sqrt((x @ x) * (y @ y)))
                        vals.append(1.0 - min(1.0, max(-1.0, cos)))
                want = float(np.mean(vals))
                tol = 1e-6 if metric == "jaccard" else 1e-5
                if exact and abs(want - scores[layer]) > tol:
                    failures.append(f"{metric} layer {layer}: numpy {want:.9f} vs lsaq {scores[layer]:.9f}")
            order = sorted(range(layers), key=lambda i: (scores[i], i))
            if order != got["ordering"]:
                failures.append(f"{metric} ordering {got['ordering']} != {order}")

    for f in failures:
        print("mismatch:", f)
    print("oracle", "FAIL" if failures else "PASS")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
