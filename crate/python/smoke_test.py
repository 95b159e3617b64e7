"""Smoke test for the `peil` extension module.

Build the extension and put it on the path first:

    cargo build --release -p peil-py
    cp target/release/libpeil.so python/peil.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import peil  # noqa: E402


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    syms = peil.qam_map([False, False, True, True], 4)
    check(abs(syms[0] - complex(1, 1) / math.sqrt(2)) < 1e-12, "QPSK 00 maps to (1+1j)/sqrt(2)")
    check(peil.qam_demap(syms, 4) == [False, False, True, True], "QAM round trip")

    x = [complex(i, -i) for i in range(8)]
    back = peil.fft(peil.fft(x), inverse=True)
    check(max(abs(a - b) for a, b in zip(x, back)) < 1e-12, "unitary FFT round trip")
    try:
        peil.fft([1j] * 6)
        check(False, "non power-of-two FFT rejected")
    except ValueError:
        check(True, "non power-of-two FFT rejected")

    check(peil.config_hash('{"b": 1, "a": 2}') == peil.config_hash('{"a": 2, "b": 1}'), "config hash is key-order free")

    frame = {"k": 16, "l": 4}
    ds = peil.WirelessDataset(json.dumps({"frame": frame, "n_frames": 32, "seed": 3}))
    check(len(ds) == 32, "wireless dataset length")
    shape, y = ds.received(0)
    check(shape == [16, 4] and len(y) == 64, "received grid shape")

    model = peil.WirelessModel(ds, json.dumps({"estimator": {"layers": 1, "hidden": 8, "cfo_hidden": 8}}))
    losses = model.train(ds, json.dumps({"epochs": 2, "batch_size": 8}))
    check(len(losses) == 8 and all(math.isfinite(v) for v in losses), "wireless training runs")
    stats = dict(model.evaluate(ds, "peil"))
    check(0.0 <= stats["ser"] <= 1.0, f"PEIL SER {stats['ser']:.3f} in [0, 1]")
    bound = dict(model.evaluate(ds, "oracle_bound"))
    check(bound["ser"] <= stats["ser"] + 1e-12, "oracle bound no worse than untrained PEIL")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "frames.peib")
        ds.save(path)
        again = peil.WirelessDataset.load(path)
        check(again.received(5) == ds.received(5), "dataset save/load round trip")
        ckpt = os.path.join(tmp, "model.ckpt")
        model.save(ckpt)
        restored = peil.WirelessModel.load(ckpt)
        check(dict(restored.evaluate(ds, "peil")) == stats, "checkpoint round trip")

    mri = peil.MriDataset(json.dumps({"size": 16, "coils": 2, "n": 2, "seed": 1}))
    mmodel = peil.MriModel(mri, json.dumps({"unet": {"base": 4, "depth": 1, "cg_iters": 3}}))
    mlosses = mmodel.train(mri, json.dumps({"task": "mri", "epochs": 1, "batch_size": 2, "gamma": 0.1}))
    check(len(mlosses) == 1, "MRI training step")
    res = dict(mmodel.evaluate(mri))
    check(all(math.isfinite(v) for v in res.values()), "MRI evaluation finite")

    try:
        peil.WirelessDataset('{"profile": "nope"}')
        check(False, "unknown profile rejected")
    except ValueError:
        check(True, "unknown profile rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
