#!/usr/bin/env python3
"""Benchmark the ESKF hot loop: pure-Python reference vs compiled extension.

Usage: python3 benchmarks/bench_fusion.py [--duration 60] [--repeats 3]
"""

import argparse
import time

import numpy as np

from imusynth.fusion import fuse_stream, native_available
from imusynth.noise import ImuNoiseParams, add_noise
from imusynth.so3 import exp_so3
from imusynth.synthesis import synthesize_stream
from imusynth.trajectory import SensorTrajectory

FPS = 60.0


def make_stream(duration, seed):
    rng = np.random.default_rng(seed)
    m = int(duration * FPS) + 1
    t = np.arange(m) / FPS
    rotvec = np.zeros((m, 3))
    pos = np.zeros((m, 3))
    for _ in range(5):
        f = rng.uniform(0.1, 0.8)
        rotvec += rng.uniform(0.0, 0.3, 3) * np.sin(2.0 * np.pi * f * t[:, None] + rng.uniform(0, 6.3, 3))
    for _ in range(4):
        f = rng.uniform(0.1, 1.0)
        pos += rng.uniform(0.0, 0.08, 3) * np.sin(2.0 * np.pi * f * t[:, None] + rng.uniform(0, 6.3, 3))
    envelope = np.minimum(1.0, t / 2.0)[:, None]
    traj = SensorTrajectory(FPS, pos * envelope, exp_so3(rotvec * envelope))
    clean = synthesize_stream(traj)
    noisy, _ = add_noise(clean, ImuNoiseParams.from_profile("consumer-mems", seed=seed))
    return noisy


def bench(stream, backend, repeats):
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fuse_stream(stream, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration", type=float, default=60.0, help="stream length in seconds")
    parser.add_argument("--repeats", type=int, default=3, help="timing repeats, best-of")
    args = parser.parse_args()

    stream = make_stream(args.duration, seed=0)
    n = stream.accel.shape[0]
    print(f"stream: {args.duration:.0f} s, {n} samples at {stream.sample_rate:.0f} Hz")

    t_py, r_py = bench(stream, "python", args.repeats)
    rate_py = n / t_py
    print(f"python : {t_py * 1e3:8.1f} ms  ({rate_py / 1e3:7.1f} ksamples/s)")

    if not native_available():
        print("native : extension not built (pip install -e . compiles it)")
        return

    t_nat, r_nat = bench(stream, "native", args.repeats)
    rate_nat = n / t_nat
    print(f"native : {t_nat * 1e3:8.1f} ms  ({rate_nat / 1e3:7.1f} ksamples/s)")
    print(f"speedup: {t_py / t_nat:.1f}x")
    drift = np.abs(r_py.quaternions - r_nat.quaternions).max()
    print(f"max quaternion component difference: {drift:.2e}")


if __name__ == "__main__":
    main()
