"""Timing comparison between the compiled and pure-NumPy kernel backends.

Runs each kernel's forward+backward pair on padded batches sized like a
training step, then times one full training epoch per variant under each
backend. Invoke from the repository root:

    python3 benchmarks/bench_backends.py [--repeats N]

The compiled backend is optional; when it is not built, only the NumPy
column is reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from setmatch import backends
from setmatch.numeric import SeededRng
from setmatch.params import ModelConfig, ModelParams
from setmatch.synthdata import GenConfig, make_pool
from setmatch.training import OptimizerState, TrainConfig, train_epoch

B, N, M, D, H, DG = 64, 16, 16, 32, 4, 8


def _kernel_cases(rng: SeededRng):
    x = rng.gaussian(B * N, D).reshape(B, N, D)
    y = rng.gaussian(B * M, D).reshape(B, M, D)
    mask_x = np.ones((B, N), dtype=np.float64)
    mask_y = np.ones((B, M), dtype=np.float64)
    mask_x[:, N - 3 :] = 0.0
    mask_y[:, M - 2 :] = 0.0
    w_sq = rng.gaussian(D, D)
    heads = rng.gaussian(H * DG, D).reshape(H, DG, D)
    wh = rng.gaussian(D, H * DG)
    return {
        "linear": ((x, w_sq), (B, N, D)),
        "ffn": ((x, w_sq, np.zeros(D), w_sq.T.copy(), np.zeros(D), 0.0, mask_x), (B, N, D)),
        "mhsa": ((x, heads, heads * 0.9, heads * 1.1, wh, mask_x), (B, N, D)),
        "cross_attn": ((x, y, heads, heads * 0.9, heads * 1.1, wh, mask_x, mask_y), (B, N, D)),
        "cross_aff": ((x, y, heads, heads * 0.9, wh, mask_x, mask_y), (B, N, D)),
        "mcs": ((x, y, heads, rng.gaussian(1, H)[0], mask_x, mask_y), (B,)),
        "pool": (
            (
                x,
                rng.gaussian(1, D)[0],
                w_sq,
                w_sq * 0.9,
                w_sq * 1.1,
                rng.gaussian(D, D),
                mask_x,
            ),
            (B, D),
        ),
    }


def time_kernels(kern, repeats: int) -> dict:
    rng = SeededRng(7)
    out = {}
    for name, (args, out_shape) in _kernel_cases(rng).items():
        fwd = getattr(kern, f"{name}_fwd")
        bwd = getattr(kern, f"{name}_bwd")
        dout = np.ones(out_shape)
        fwd(*args)  # warm the caches before timing
        t0 = time.perf_counter()
        for _ in range(repeats):
            result, cache = fwd(*args)
            bwd(dout, cache)
        out[name] = (time.perf_counter() - t0) / repeats
    return out


def time_epoch(kern, variant: str) -> float:
    backends.active = kern
    gen = GenConfig(seed=0)
    cfg = TrainConfig(seed=0, k=8, epochs=1, loss_kind="kpair")
    pool = make_pool("subset", gen, 8, 256, SeededRng(0).child(1))
    model = ModelParams.init(ModelConfig(variant=variant), seed=0)
    state = OptimizerState.init(model, cfg)
    t0 = time.perf_counter()
    train_epoch(model, pool, cfg, state)
    return time.perf_counter() - t0


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    names = backends.available_backends()
    kerns = {name: backends.get_backend(name) for name in names}
    print(f"backends: {', '.join(names)}   batch {B}x{N}x{D}, {H} heads\n")

    rows = {name: time_kernels(kern, args.repeats) for name, kern in kerns.items()}
    header = f"{'kernel':<12}" + "".join(f"{name:>12}" for name in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel in rows[names[0]]:
        line = f"{kernel:<12}"
        for name in names:
            line += f"{rows[name][kernel] * 1e3:>10.2f}ms"
        if len(names) == 2:
            ratio = rows[names[0]][kernel] / rows[names[-1]][kernel]
            line += f"{ratio:>9.1f}x"
        print(line)

    print(f"\n{'train epoch':<12}" + "".join(f"{name:>12}" for name in names))
    for variant in ("attention", "affinity", "baseline"):
        line = f"{variant:<12}"
        for name in names:
            line += f"{time_epoch(kerns[name], variant) * 1e3:>10.0f}ms"
        print(line)
    backends.active = backends.get_backend()


if __name__ == "__main__":
    main()
