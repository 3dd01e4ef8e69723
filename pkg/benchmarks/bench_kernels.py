"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints per-call times for each kernel at a few batch sizes, then the time of
one training step of the default Edit_LSTM_IDM model under each backend (run
in a subprocess with ``EDITFOLLOWER_PURE_PYTHON`` set accordingly).
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from editfollower.kernels import _pykernels

try:
    from editfollower.kernels import _ckernels
except ImportError:
    _ckernels = None

STEP_SNIPPET = """
import time, numpy as np
from editfollower import autodiff as ad
from editfollower.kernels import BACKEND
from editfollower.models import ModelConfig, Standardizer, build_model
from editfollower.rollout import simulate
from editfollower.synthcorpus import ACCEPTANCE_SPEC, generate
from editfollower.training import composite_loss, make_windows
c = generate(ACCEPTANCE_SPEC, 40)
labels = c.psi("speed")
stats = Standardizer.fit(c.events, list(labels.values()))
cfg = ModelConfig()
win = make_windows(c.events, labels, stats, cfg, 25)
batch, v, s = win.take(np.arange(min(64, len(win))))
model = build_model(cfg, stats=stats, seed=0)
def step():
    with ad.Tape():
        res = simulate(model, batch)
        ad.backward(composite_loss(res.speeds, res.spacings, v, s, batch.psi, 1.0, "speed", 0.1).l_total)
    ad.zero_grad(model.parameters())
step()
t = time.perf_counter()
for _ in range({n}):
    step()
print(BACKEND, (time.perf_counter() - t) / {n})
"""


def _cases(batch: int, hidden: int, rng: np.random.Generator):
    z = rng.normal(size=(batch, 4 * hidden))
    c = rng.normal(size=(batch, hidden))
    h, c1, gates, tanh_c = _pykernels.lstm_cell_forward(z, c)
    v = rng.uniform(5, 30, batch)
    s = rng.uniform(5, 60, batch)
    lv0 = v + rng.normal(0, 2, batch)
    lv1 = lv0 + rng.normal(0, 0.2, batch)
    p = np.column_stack([rng.uniform(25, 35, batch), rng.uniform(1, 2, batch), rng.uniform(1, 2, batch),
                         rng.uniform(1.5, 3, batch), np.full(batch, 4.0), rng.uniform(1, 3, batch)])
    cache = _pykernels.idm_step_forward(v, s, lv0, lv1, p, 0.1)[3]
    return {
        "lstm_cell_forward": lambda k: k.lstm_cell_forward(z, c),
        "lstm_cell_backward": lambda k: k.lstm_cell_backward(h, c1, gates, c, tanh_c),
        "idm_step_forward": lambda k: k.idm_step_forward(v, s, lv0, lv1, p, 0.1),
        "idm_step_backward": lambda k: k.idm_step_backward(v, s, cache, 0.1),
    }


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<20}{'batch':>7}" + "".join(f"{name + ' (us)':>16}" for name, _ in backends) + f"{'speedup':>10}")
    for batch in (1, 64, 1024):
        for name, call in _cases(batch, 64, rng).items():
            times = []
            for _, mod in backends:
                n = max(1, repeat)
                times.append(min(timeit.repeat(lambda: call(mod), number=n, repeat=3)) / n * 1e6)
            speed = f"{times[0] / times[1]:>9.2f}x" if len(times) == 2 else ""
            print(f"{name:<20}{batch:>7}" + "".join(f"{t:>16.2f}" for t in times) + speed)
    sim_lv = 20 + np.sin(np.arange(3000) * 0.05)
    p = np.array([30.0, 1.5, 1.5, 2.0, 4.0, 2.0])
    row = [min(timeit.repeat(lambda: mod.idm_simulate(sim_lv, 20.0, 30.0, p, 0.1), number=5, repeat=3)) / 5 * 1e6
           for _, mod in backends]
    speed = f"{row[0] / row[1]:>9.2f}x" if len(row) == 2 else ""
    print(f"{'idm_simulate':<20}{3000:>7}" + "".join(f"{t:>16.2f}" for t in row) + speed)


def bench_training_step(n: int) -> None:
    print("\ntraining step (batch 64, H=50, P=50, hidden 64):")
    for pure in ("1", "0"):
        env = {**os.environ, "EDITFOLLOWER_PURE_PYTHON": pure}
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]) * 1e3:10.1f} ms")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200, help="calls per timing sample")
    ap.add_argument("--steps", type=int, default=5, help="training steps to time per backend")
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    bench_kernels(args.repeat)
    bench_training_step(args.steps)


if __name__ == "__main__":
    main()
