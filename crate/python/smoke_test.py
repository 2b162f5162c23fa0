"""Smoke test for the gocom_py extension.

Build and run from the repository root:

    cargo build --release -p gocom-py --features extension-module
    cp target/release/libgocom_py.so python/gocom_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gocom_py as g  # noqa: E402


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    if not cond:
        sys.exit(1)


check("noise power at 10 dB", abs(g.snr_to_noise_power(10.0) - 0.1) < 1e-12)
check("symbols at rate 1/6", g.symbols_for_rate(768, 1, 6) == 128)

z = g.normalize_power([3.0, 4.0, 1.0, 0.0])
check("unit power", abs(sum(v * v for v in z) / 2 - 1.0) < 1e-12)
check("noiseless awgn is identity", g.transmit(z, "awgn", None, 0) == z)
y = g.transmit(z, "rayleigh", 0.0, 5)
check("rayleigh output length", len(y) == len(z))

check("combined loss", abs(g.combined_loss(2.0, 4.0, 0.25) - 2.5) < 1e-12)
check("modified reward", abs(g.modified_reward(1.0, [0.0, 0.0], [1.0, 1.0], 0.5) - 0.0) < 1e-12)
check("psnr", abs(g.psnr([0.0, 0.0], [0.1, 0.1], 1.0) - 20.0) < 1e-9)
check("discounted return", abs(g.discounted_return([1.0, 1.0, 1.0], 0.5) - 1.75) < 1e-12)

pixels, shape, labels = g.gen_synth(20, 10, 0)
check("synth shapes", shape[0] == 20 and len(pixels) == math.prod(shape) and len(labels) == 20)

env = g.CatchEnv()
obs = env.reset(1)
check("catch observation", len(obs) == math.prod(env.observation_shape) == 768)
total, done = 0.0, False
while not done:
    obs, r, done = env.step(env.scripted_action())
    total += r
check(f"scripted catch episode scores 10 (got {total})", total == 10.0)

link = g.Link([1, 8, 8], 11, "dense", False, 0)
blocks = link.encode([0.5] * 64, 1, 10.0)
check("encoded block power", abs(sum(v * v for v in blocks[0]) / 11 - 1.0) < 1e-9)
check("demapped length", len(link.demap(blocks, 10.0)) == 64)

with tempfile.TemporaryDirectory() as d:
    path = os.path.join(d, "p.ckpt")
    g.save_checkpoint(path, {"w": ([2, 2], [1.0, 2.0, 3.0, 4.0])})
    check("checkpoint round trip", g.load_checkpoint(path) == {"w": ([2, 2], [1.0, 2.0, 3.0, 4.0])})

    exp = g.Experiment("[experiment]\nsystem = random\nrepeats = 2\n")
    exp.out = os.path.join(d, "run")
    rows = exp.run("baseline")
    check("baseline rows", len(rows) > 0 and {r["system"] for r in rows} == {"upper", "random"})
    back = g.read_metrics(os.path.join(d, "run", "metrics.csv"))
    check("metrics.csv readable", len(back) == len(rows))

print("all smoke checks passed")
