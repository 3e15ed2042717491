#!/usr/bin/env python3
# Copyright 2026 The CARMEN Emulator Authors
# SPDX-License-Identifier: Apache-2.0
"""Train the 196-64-32-32-10 reference MLP and export it in carmen formats.

Source digits come from the MIT-licensed `mnist` npm package (10,000 real
MNIST samples, 28x28), obtained with `npm pack mnist`. Images are
downsampled to 14x14 by 2x2 averaging.

Usage: train_mnist196.py <path-to-package/src/digits> <out-dir>
"""
import json
import pathlib
import sys

import numpy as np

SEED = 20260101
LAYERS = [196, 64, 32, 32, 10]
ACTIVATIONS = ["relu", "relu", "relu", "softmax"]
N_TRAIN = 8000
N_CALIB = 64


def load_digits(digits_dir):
    xs, ys = [], []
    for d in range(10):
        raw = json.loads((digits_dir / f"{d}.json").read_text())["data"]
        arr = np.asarray(raw, dtype=np.float64).reshape(-1, 28, 28)
        xs.append(arr)
        ys.append(np.full(len(arr), d, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    x = x.reshape(-1, 14, 2, 14, 2).mean(axis=(2, 4)).reshape(-1, 196)
    return x, y


def write_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = "shape " + " ".join(str(d) for d in arr.shape) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(arr.tobytes())


def forward(params, x):
    h = x
    acts = [h]
    for i, (w, b) in enumerate(params):
        z = h @ w.T + b
        if i + 1 < len(params):
            h = np.maximum(z, 0.0)
        else:
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
        acts.append(h)
    return acts


def train(x, y, rng, epochs=40, batch=64, lr=2e-3, wd=1e-4):
    params = []
    for fan_in, fan_out in zip(LAYERS[:-1], LAYERS[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        params.append([w, np.zeros(fan_out)])
    m = [[np.zeros_like(p) for p in layer] for layer in params]
    v = [[np.zeros_like(p) for p in layer] for layer in params]
    step = 0
    onehot = np.eye(10)[y]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for s in range(0, len(x), batch):
            idx = order[s:s + batch]
            acts = forward(params, x[idx])
            delta = (acts[-1] - onehot[idx]) / len(idx)
            step += 1
            for i in reversed(range(len(params))):
                w, b = params[i]
                gw = delta.T @ acts[i] + wd * w
                gb = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ w) * (acts[i] > 0)
                for j, g in enumerate((gw, gb)):
                    m[i][j] = 0.9 * m[i][j] + 0.1 * g
                    v[i][j] = 0.999 * v[i][j] + 0.001 * g * g
                    mh = m[i][j] / (1 - 0.9 ** step)
                    vh = v[i][j] / (1 - 0.999 ** step)
                    params[i][j] -= lr * mh / (np.sqrt(vh) + 1e-8)
    return params


def main():
    digits_dir = pathlib.Path(sys.argv[1])
    out = pathlib.Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    x, y = load_digits(digits_dir)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    xtr, ytr = x[:N_TRAIN], y[:N_TRAIN]
    xte, yte = x[N_TRAIN:], y[N_TRAIN:]

    params = train(xtr, ytr, rng)
    acc_tr = (forward(params, xtr)[-1].argmax(1) == ytr).mean()
    acc_te = (forward(params, xte)[-1].argmax(1) == yte).mean()
    print(f"train acc {acc_tr:.4f}  test acc {acc_te:.4f}")

    blob = []
    layers = []
    offset = 0
    for (w, b), act in zip(params, ACTIVATIONS):
        layer = {
            "kind": "dense",
            "dims": {"in": int(w.shape[1]), "out": int(w.shape[0])},
            "activation": act,
            "weight_offset": offset,
        }
        blob.append(w.ravel())
        offset += w.size
        layer["bias_offset"] = offset
        blob.append(b.ravel())
        offset += b.size
        layers.append(layer)
    manifest = {"name": "mnist196", "input_shape": [196], "layers": layers}
    (out / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    np.concatenate(blob).astype("<f4").tofile(out / "weights.bin")

    write_tensor(out / "test_inputs.bin", xte)
    (out / "test_labels.txt").write_text("".join(f"{int(v)}\n" for v in yte))
    write_tensor(out / "calib_inputs.bin", xtr[:N_CALIB])


if __name__ == "__main__":
    main()
