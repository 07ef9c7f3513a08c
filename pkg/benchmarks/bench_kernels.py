"""Numba vs numpy: local SGD on one shard, then one full 50-round experiment.

    python benchmarks/bench_kernels.py [--repeat 200]
"""

import argparse
import time

import numpy as np

from fedsel import _kernels
from fedsel.core import DatasetConfig, ExperimentConfig, StrategyConfig, derive_stream
from fedsel.data import generate_synthetic
from fedsel.federation import run_experiment
from fedsel.model import ModelSpec, init_params, local_train


def bench_local(backend, hidden, repeat):
    ds = generate_synthetic(200, 20, 10, 3.0, derive_stream(0, "bench"))
    params = init_params(ModelSpec(20, 10, hidden), derive_stream(0, "init"))
    local_train(params, ds.features, ds.labels, 1, 0.05, 32, derive_stream(0, "s"), backend)
    start = time.perf_counter()
    for i in range(repeat):
        out = local_train(params, ds.features, ds.labels, 1, 0.05, 32,
                          derive_stream(i, "s"), backend)
    return (time.perf_counter() - start) / repeat, out.values


def bench_run(backend):
    cfg = ExperimentConfig(volatility="volatile", learning_rate=0.05,
                           strategy=StrategyConfig("rbff"),
                           dataset=DatasetConfig(n_samples=11111))
    start = time.perf_counter()
    records = run_experiment(cfg, backend=backend)
    return time.perf_counter() - start, records[-1]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    backends = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])

    print(f"{'kernel':<24}{'backend':<8}{'time':>12}")
    for hidden in (0, 32):
        results = {b: bench_local(b, hidden, args.repeat) for b in backends}
        for b, (t, _) in results.items():
            print(f"{'local_train h=' + str(hidden):<24}{b:<8}{t * 1e6:>10.1f}us")
        if len(results) == 2:
            diff = np.abs(results["numpy"][1] - results["numba"][1]).max()
            print(f"{'':<24}speedup {results['numpy'][0] / results['numba'][0]:.2f}x, "
                  f"max |diff| {diff:.1e}")
    for b in backends:
        t, last = bench_run(b)
        print(f"{'run_experiment 50x20':<24}{b:<8}{t:>11.2f}s  acc={last.global_accuracy:.4f}")


if __name__ == "__main__":
    main()
