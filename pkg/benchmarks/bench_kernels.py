"""Time the compiled and pure-Python kernel backends side by side.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is timed on shapes typical of the synthetic task (batch 64,
hidden width 40), then one full training step of the model is timed per
backend.
"""

import argparse
import timeit

import numpy as np

from husformer import kernels
from husformer.data import synthesize_dataset
from husformer.model import Husformer, ModelConfig
from husformer.tensor import Tape
from husformer.training import Adam, mae_loss


def kernel_cases(rng):
    x = rng.normal(size=(64 * 6 * 3, 6))
    h = rng.normal(size=(64 * 6, 40))
    g, b = rng.normal(size=40), rng.normal(size=40)
    xc, wc = rng.normal(size=(64, 3, 24)), rng.normal(size=(3, 3, 3))
    gy_c = rng.normal(size=(64, 3, 24))

    def ln_bwd():
        _, xhat, rstd = kernels.layer_norm_forward(h, g, b, 1e-5)
        kernels.layer_norm_backward(h, xhat, rstd, g)

    return {
        "softmax fwd+bwd": lambda: kernels.softmax_backward(kernels.softmax_forward(x), x),
        "layer_norm fwd": lambda: kernels.layer_norm_forward(h, g, b, 1e-5),
        "layer_norm fwd+bwd": ln_bwd,
        "conv1d fwd": lambda: kernels.conv1d_forward(xc, wc),
        "conv1d bwd": lambda: kernels.conv1d_backward(gy_c, xc, wc),
    }


def training_step():
    ds = synthesize_dataset(3, n_samples=64, seed=0)
    cfg = ModelConfig([m._asdict() for m in ds.modalities], 3, hidden_dim=40, heads=3, d_k=13, d_v=13,
                      cm_layers=2, sa_layers=1, ffn_dim=40)
    model = Husformer(cfg, seed=0)
    opt = Adam(model.parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    batch = ds.batch(np.arange(64))

    def step():
        opt.zero_grad()
        with Tape() as tape:
            loss = mae_loss(model.forward(batch.inputs, training=True, rng=rng).probs, batch.labels)
        tape.backward(loss)
        opt.step()

    return step


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    previous = kernels.BACKEND
    results = {}
    try:
        for name in backends:
            kernels.use_backend(name)
            cases = kernel_cases(np.random.default_rng(0))
            for label, fn in cases.items():
                results[label, name] = best_of(fn, args.repeat, 200)
            results["training step (batch 64)", name] = best_of(training_step(), args.repeat, 3)
    finally:
        kernels.use_backend(previous)

    labels = list(dict.fromkeys(label for label, _ in results))
    header = f"{'kernel':<26}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label in labels:
        times = [results[label, b] for b in backends]
        row = f"{label:<26}" + "".join(f"{t * 1e6:>11.1f} us" for t in times)
        if len(backends) == 2:
            row += f"{times[1] / times[0]:>9.2f}x"
        print(row)
    if len(backends) == 1:
        print(f"(only the {backends[0]} backend is available)")


if __name__ == "__main__":
    main()
