"""Train the 196-32-10 rate-coded LIF classifier used as the accuracy fixture.

Usage: python3 scripts/train_fixture.py <idx-dir> <out-network.json>

The update rule mirrors the simulator's float reference exactly:
  v <- beta * v + I;  spike if v >= threshold;  subtractive reset
with input spikes integrated in the same step and hidden spikes reaching
the output layer one step later. Surrogate gradient: fast sigmoid.
"""
import json
import struct
import sys

import numpy as np
import torch

T = 50
BETA = 0.75  # D750
THRESHOLD = 1.0
HIDDEN = 32
EPOCHS = 20
SEED = 7


def load_idx(dirname, split):
    with open(f"{dirname}/{split}-images-idx3-ubyte", "rb") as f:
        _, n, r, c = struct.unpack(">IIII", f.read(16))
        images = np.frombuffer(f.read(), dtype=np.uint8).reshape(n, r, c)
    with open(f"{dirname}/{split}-labels-idx1-ubyte", "rb") as f:
        _, n = struct.unpack(">II", f.read(8))
        labels = np.frombuffer(f.read(), dtype=np.uint8)
    x = images.astype(np.float64) / 255.0
    x = x.reshape(n, 14, 2, 14, 2).mean(axis=(2, 4)).reshape(n, 196)
    return torch.tensor(x, dtype=torch.float32), torch.tensor(labels, dtype=torch.long)


class Spike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u):
        ctx.save_for_backward(u)
        return (u >= 0).float()

    @staticmethod
    def backward(ctx, grad):
        (u,) = ctx.saved_tensors
        return grad / (1.0 + 25.0 * u.abs()) ** 2


def run(w1, w2, x):
    b = x.shape[0]
    v1 = torch.zeros(b, HIDDEN)
    v2 = torch.zeros(b, 10)
    s1_prev = torch.zeros(b, HIDDEN)
    counts = torch.zeros(b, 10)
    for _ in range(T):
        stim = (torch.rand_like(x) < x).float()
        v1 = BETA * v1 + stim @ w1.t()
        s1 = Spike.apply(v1 - THRESHOLD)
        v1 = v1 - s1.detach() * THRESHOLD
        v2 = BETA * v2 + s1_prev @ w2.t()
        s2 = Spike.apply(v2 - THRESHOLD)
        v2 = v2 - s2.detach() * THRESHOLD
        counts = counts + s2
        s1_prev = s1
    return counts


def main():
    idx_dir, out = sys.argv[1], sys.argv[2]
    torch.manual_seed(SEED)
    xtr, ytr = load_idx(idx_dir, "train")
    xte, yte = load_idx(idx_dir, "test")
    w1 = torch.nn.Parameter(torch.randn(HIDDEN, 196) * 0.15)
    w2 = torch.nn.Parameter(torch.randn(10, HIDDEN) * 0.3)
    opt = torch.optim.Adam([w1, w2], lr=5e-3)
    for epoch in range(EPOCHS):
        perm = torch.randperm(len(xtr))
        for i in range(0, len(xtr), 128):
            idx = perm[i : i + 128]
            counts = run(w1, w2, xtr[idx])
            loss = torch.nn.functional.cross_entropy(counts * 0.5, ytr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            acc = (run(w1, w2, xte).argmax(1) == yte).float().mean().item()
        print(f"epoch {epoch} loss {loss.item():.3f} test acc {acc:.4f}")
    net = {
        "layers": [196, HIDDEN, 10],
        "weights": [
            [[float(v) for v in row] for row in w1.detach().numpy().astype(np.float64)],
            [[float(v) for v in row] for row in w2.detach().numpy().astype(np.float64)],
        ],
        "threshold": [THRESHOLD, THRESHOLD],
        "decay": ["D750", "D750"],
        "reset": ["Subtract", "Subtract"],
    }
    with open(out, "w") as f:
        json.dump(net, f)


if __name__ == "__main__":
    main()
