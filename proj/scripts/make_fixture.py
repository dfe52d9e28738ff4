#!/usr/bin/env python3
"""Train the LeNet fixture and write the committed test fixtures.

Input is the 5000-sample MNIST subset shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns then the label).
Outputs, all under tests/fixtures/:

  lenet.cegm                      CEGM v1 model
  val-images-idx3-ubyte           512-image validation slice (graph discovery)
  val-labels-idx1-ubyte
  test-images-idx3-ubyte          512-image test slice (evaluation)
  test-labels-idx1-ubyte
  lenet_reference_logits.json     torch logits of the first 16 test images

Usage: make_fixture.py --csv mnist_5k.csv.gz --out tests/fixtures
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SLICE = 512


class LeNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 5, padding=2)
        self.conv2 = nn.Conv2d(6, 16, 5)
        self.fc1 = nn.Linear(400, 120)
        self.fc2 = nn.Linear(120, 84)
        self.fc3 = nn.Linear(84, 10)

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = torch.flatten(x, 1)
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))
        return self.fc3(x)


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def write_cegm(path, model):
    blob = bytearray()

    def param(t):
        arr = t.detach().cpu().numpy().astype("<f4")
        entry = {"count": int(arr.size), "offset": len(blob), "shape": list(arr.shape)}
        blob.extend(arr.tobytes())
        return entry

    layers = [
        {"kind": "conv2d", "name": "conv1", "padding": [2, 2], "stride": [1, 1],
         "weight": param(model.conv1.weight), "bias": param(model.conv1.bias)},
        {"kind": "relu", "name": "relu1"},
        {"kernel": [2, 2], "kind": "maxpool2d", "name": "pool1", "stride": [2, 2]},
        {"kind": "conv2d", "name": "conv2", "padding": [0, 0], "stride": [1, 1],
         "weight": param(model.conv2.weight), "bias": param(model.conv2.bias)},
        {"kind": "relu", "name": "relu2"},
        {"kernel": [2, 2], "kind": "maxpool2d", "name": "pool2", "stride": [2, 2]},
        {"kind": "flatten", "name": "flatten"},
        {"kind": "dense", "name": "fc1",
         "weight": param(model.fc1.weight), "bias": param(model.fc1.bias)},
        {"kind": "relu", "name": "relu3"},
        {"kind": "dense", "name": "fc2",
         "weight": param(model.fc2.weight), "bias": param(model.fc2.bias)},
        {"kind": "relu", "name": "relu4"},
        {"kind": "dense", "name": "fc3",
         "weight": param(model.fc3.weight), "bias": param(model.fc3.bias)},
    ]
    header = {
        "input_shape": [1, 28, 28],
        "layers": layers,
        "num_classes": 10,
        "preprocess": {"divide": 255.0},
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(b"CEGM")
        f.write(struct.pack("<IQ", 1, len(text)))
        f.write(text)
        f.write(bytes(blob))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--csv", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    raw = np.genfromtxt(gzip.open(args.csv), delimiter=",")
    pixels = raw[:, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = raw[:, -1].astype(np.int64)
    order = rng.permutation(len(labels))
    pixels, labels = pixels[order], labels[order]

    test_px, test_y = pixels[:SLICE], labels[:SLICE]
    val_px, val_y = pixels[SLICE:2 * SLICE], labels[SLICE:2 * SLICE]
    train_px, train_y = pixels[2 * SLICE:], labels[2 * SLICE:]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "val-images-idx3-ubyte", val_px)
    write_idx_labels(out / "val-labels-idx1-ubyte", val_y)
    write_idx_images(out / "test-images-idx3-ubyte", test_px)
    write_idx_labels(out / "test-labels-idx1-ubyte", test_y)

    def to_tensor(px):
        return torch.from_numpy(px.astype(np.float32) / np.float32(255.0)).unsqueeze(1)

    xtr, ytr = to_tensor(train_px), torch.from_numpy(train_y)
    model = LeNet()
    opt = torch.optim.Adam(model.parameters(), lr=1e-3)
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(ytr))
        for i in range(0, len(ytr), 64):
            idx = perm[i:i + 64]
            xb = xtr[idx]
            # small random shifts stand in for the data the subset lacks
            dx, dy = rng.integers(-2, 3, size=2)
            xb = torch.roll(xb, shifts=(int(dy), int(dx)), dims=(2, 3))
            loss = F.cross_entropy(model(xb), ytr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            acc_val = (model(to_tensor(val_px)).argmax(1).numpy() == val_y).mean()
            acc_test = (model(to_tensor(test_px)).argmax(1).numpy() == test_y).mean()
        print(f"epoch {epoch + 1}: loss {loss.item():.4f} val {acc_val:.4f} test {acc_test:.4f}")

    write_cegm(out / "lenet.cegm", model)
    with torch.no_grad():
        logits = model(to_tensor(test_px[:16])).numpy()
    with open(out / "lenet_reference_logits.json", "w") as f:
        json.dump({"images": "test-images-idx3-ubyte", "count": 16,
                   "logits": [[float(v) for v in row] for row in logits]}, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
