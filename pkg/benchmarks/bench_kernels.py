"""Kernel backend benchmark: numba vs numpy on the hot ops and on one training iteration.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from ucap import kernels
from ucap.models import ModelConfig
from ucap.trainer import Captioner, TrainConfig, TrainData, Trainer


def op_cases(B, H, V):
    rng = np.random.default_rng(0)
    gates = rng.normal(size=(B, 4 * H))
    c = rng.normal(size=(B, H))
    dh, dc = rng.normal(size=(B, H)), rng.normal(size=(B, H))
    logits = rng.normal(size=(B, V))
    w, g = rng.normal(size=(H, 4 * H)), rng.normal(size=(H, 4 * H))
    m, v = np.zeros_like(w), np.zeros_like(w)

    def lstm_fwd():
        kernels.lstm_forward(gates, c)

    def lstm_bwd():
        _, _, cache = kernels.lstm_forward(gates, c)
        kernels.lstm_backward(dh, dc, c, cache)

    def softmax():
        out = kernels.log_softmax_forward(logits)
        kernels.log_softmax_backward(logits, out)

    def adam():
        kernels.adam_update(w, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 1)

    return {"lstm forward": lstm_fwd, "lstm fwd+bwd": lstm_bwd,
            "log_softmax fwd+bwd": softmax, "adam update": adam}


def training_iteration(hidden, vocab=70, batch=32):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(100, 64))
    corpus = [tuple(int(x) for x in rng.integers(3, vocab, size=10)) for _ in range(200)]
    dets = [{int(rng.integers(3, vocab)): 0.9} for _ in range(100)]
    from ucap.textcorpus import Vocabulary
    voc = Vocabulary([f"w{k}" for k in range(vocab - 3)])
    cap = Captioner.create(voc, ModelConfig(len(voc), 64, hidden, hidden), list(range(3, 23)), rng)
    tr = Trainer(cap, TrainData(feats, dets, corpus), TrainConfig(batch_size=batch),
                 np.random.default_rng(1))
    return tr.iteration


def bench(fn, repeat):
    fn()  # warm up (and trigger numba compilation)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rows = []
    for B, H, V in ((32, 128, 70), (32, 512, 10000)):
        for name in op_cases(B, H, V):
            times = {}
            for be in kernels.available():
                kernels.use(be)
                times[be] = bench(op_cases(B, H, V)[name], args.repeat)
            rows.append((f"{name} B={B} H={H} V={V}", times))
    for H in (128,):
        times = {}
        for be in kernels.available():
            kernels.use(be)
            times[be] = bench(training_iteration(H), max(3, args.repeat // 5))
        rows.append((f"train iteration H={H}", times))
    backends = kernels.available()
    print(f"{'case':45s}" + "".join(f"{b:>12s}" for b in backends) + "     numpy/numba")
    for name, t in rows:
        ratio = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"{name:45s}" + "".join(f"{t[b] * 1e3:10.3f}ms" for b in backends) + f"{ratio:12.2f}x")


if __name__ == "__main__":
    main()
