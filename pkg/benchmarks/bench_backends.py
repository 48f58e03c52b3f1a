"""Compare the compiled kernels against the numpy fallback.

Micro-benchmarks call both kernel modules directly; the end-to-end numbers
run FlowCast on a tabulated field in a child process per backend, selected
with ``FLOWCAST_BACKEND``.

    python3 benchmarks/bench_backends.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from flowcast._backend import available_backends

END_TO_END = r"""
import json, time
import numpy as np
from flowcast._backend import BACKEND
from flowcast.core import SpecConfig, make_uniform_grid
from flowcast.fields import TabulatedField, resolve_field
from flowcast.integrator import flowcast, full_euler

bridge = resolve_field("gauss-bridge")
axes = [np.linspace(-6, 6, 33), np.linspace(-6, 6, 33), np.linspace(0, 1, 21)]
field = TabulatedField.from_field(bridge, axes)
grid = make_uniform_grid(200)
x0 = np.array([0.4, -0.3])
best = {}
for name, fn in (
    ("full_euler K=200", lambda: full_euler(field, grid, x0)),
    ("flowcast K=200 eps=1e-3", lambda: flowcast(field, grid, x0, SpecConfig(1e-3))),
):
    times = []
    for _ in range(REPEAT):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    best[name] = min(times)
print(json.dumps({"backend": BACKEND, "best": best}))
"""


def micro(repeat):
    rng = np.random.default_rng(0)
    axes = [np.linspace(-4, 4, 33), np.linspace(-4, 4, 33), np.linspace(0, 1, 21)]
    values = rng.normal(size=(33, 33, 21, 2))
    points = np.ascontiguousarray(rng.uniform(-4, 4, size=(2000, 3)))
    points[:, 2] = rng.uniform(0, 1, size=2000)
    anchor = rng.normal(size=64)
    vel = np.ascontiguousarray(rng.normal(size=(200, 64)))
    times = np.linspace(0.01, 1.0, 200)
    cases = {
        "multilinear 2000 pts, 3-d": lambda k: k.multilinear(axes, values, points),
        "multilinear 1 pt": lambda k: k.multilinear(axes, values, points[:1]),
        "anchor_mse 200x64": lambda k: k.anchor_mse(anchor, vel),
        "extrapolate 200x64": lambda k: k.extrapolate(anchor, anchor, times, 0.0),
        "mse 64": lambda k: k.mse(anchor, vel[0]),
    }
    out = {}
    for name, fn in cases.items():
        out[name] = {}
        for backend, module in available_backends().items():
            timer = timeit.Timer(lambda: fn(module))
            n, _ = timer.autorange()
            out[name][backend] = min(timer.repeat(repeat, n)) / n
    return out


def end_to_end(repeat):
    out = {}
    for backend in available_backends():
        env = dict(os.environ, FLOWCAST_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, "-c", END_TO_END.replace("REPEAT", str(repeat))],
            env=env, capture_output=True, text=True, check=True,
        )
        result = json.loads(proc.stdout)
        for name, t in result["best"].items():
            out.setdefault(name, {})[result["backend"]] = t
    return out


def show(title, table):
    backends = sorted({b for row in table.values() for b in row})
    print(f"\n{title}")
    print(f"{'case':32s}" + "".join(f"{b:>14s}" for b in backends) + f"{'speedup':>10s}")
    for name, row in table.items():
        cells = "".join(f"{row[b] * 1e6:12.1f}us" for b in backends)
        ratio = row["python"] / row["compiled"] if "compiled" in row else float("nan")
        print(f"{name:32s}{cells}{ratio:9.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if "compiled" not in available_backends():
        print("compiled extension not built; only the numpy fallback is timed", file=sys.stderr)
    show("kernels (best per call)", micro(args.repeat))
    show("end to end, tabulated bridge field (best per run)", end_to_end(args.repeat))


if __name__ == "__main__":
    main()
