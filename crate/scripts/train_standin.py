"""Train stand-in controllers with the benchmark architectures.

The original trained weights are not distributed with this repository. These
networks imitate simple hand-written policies with the same input/output
shapes so the benchmarks can run end to end:

* vehicle: 4x100x100x2 ReLU, steers toward the origin around the circular
  obstacle at (4, 4) of radius 2;
* double integrator: 2x10x5x1 ReLU, imitates clip(-0.6 x1 - 1.2 x2, -1, 1).

Usage: python scripts/train_standin.py [output_dir]
"""

import json
import math
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

OBSTACLE = np.array([4.0, 4.0])


def wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def vehicle_policy(x):
    p = x[:, :2]
    phi = x[:, 2]
    v = x[:, 3]
    dist = np.linalg.norm(p, axis=1, keepdims=True).clip(1e-3)
    rel = p - OBSTACLE
    d = np.linalg.norm(rel, axis=1, keepdims=True).clip(1e-3)
    push = np.exp(-(d - 2.0)) / d
    tangent = np.stack([rel[:, 1], -rel[:, 0]], axis=1)
    desired = -p / dist + 1.5 * push * rel / d + 0.8 * push * tangent / d
    heading = np.arctan2(desired[:, 1], desired[:, 0])
    steer = np.clip(1.2 * wrap(heading - phi), -0.6, 0.6)
    v_des = np.clip(0.5 * dist[:, 0], 0.0, 2.5)
    force = np.clip(2.0 * (v_des - v), -4.0, 4.0)
    return np.stack([force, steer], axis=1)


def di_policy(x):
    return np.clip(-0.6 * x[:, :1] - 1.2 * x[:, 1:2], -1.0, 1.0)


def mlp(sizes):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b), nn.ReLU()]
    return nn.Sequential(*layers[:-1])


def fit(net, x, y, epochs, lr, batch=512):
    xt = torch.tensor(x, dtype=torch.float64)
    yt = torch.tensor(y, dtype=torch.float64)
    opt = torch.optim.Adam(net.parameters(), lr=lr, weight_decay=1e-6)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, epochs)
    for epoch in range(epochs):
        perm = torch.randperm(len(xt))
        for k in range(0, len(xt), batch):
            idx = perm[k : k + batch]
            opt.zero_grad()
            loss = ((net(xt[idx]) - yt[idx]) ** 2).mean()
            loss.backward()
            opt.step()
        sched.step()
    with torch.no_grad():
        return float(((net(xt) - yt) ** 2).mean())


def export(net, input_dim):
    layers = []
    linears = [m for m in net if isinstance(m, nn.Linear)]
    for k, lin in enumerate(linears):
        layers.append(
            {
                "weights": lin.weight.detach().numpy().tolist(),
                "bias": lin.bias.detach().numpy().tolist(),
                "activation": "identity" if k == len(linears) - 1 else "relu",
            }
        )
    return {"input_dim": input_dim, "layers": layers}


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/assets")
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    torch.set_default_dtype(torch.float64)
    rng = np.random.default_rng(0)

    lo = np.array([-2.0, -2.0, -math.pi, 0.0])
    hi = np.array([10.0, 10.0, math.pi, 3.0])
    xv = lo + (hi - lo) * rng.random((200_000, 4))
    # denser coverage around the benchmark's initial set and early trajectory
    focus_lo = np.array([5.0, 5.0, -2 * math.pi / 3 - 0.6, 1.5])
    focus_hi = np.array([8.5, 8.5, -2 * math.pi / 3 + 0.6, 2.6])
    xf = focus_lo + (focus_hi - focus_lo) * rng.random((100_000, 4))
    xv = np.concatenate([xv, xf])
    veh = mlp([4, 100, 100, 2])
    mse = fit(veh, xv, vehicle_policy(xv), epochs=40, lr=2e-3)
    print(f"vehicle mse {mse:.4g}")
    (out / "vehicle_standin.json").write_text(json.dumps(export(veh, 4)))

    xd = np.stack([rng.uniform(-1.0, 4.0, 50_000), rng.uniform(-2.0, 2.0, 50_000)], axis=1)
    di = mlp([2, 10, 5, 1])
    mse = fit(di, xd, di_policy(xd), epochs=60, lr=3e-3)
    print(f"double integrator mse {mse:.4g}")
    (out / "double_integrator_standin.json").write_text(json.dumps(export(di, 2)))


if __name__ == "__main__":
    main()
