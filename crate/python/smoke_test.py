#!/usr/bin/env python3
"""Smoke test for the linchain_py extension module.

Builds the cdylib if needed, imports it, and exercises the main types
and operations end to end. Run from the repository root:

    python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    lib = REPO / "target" / "release" / "liblinchain_py.so"
    if not lib.exists():
        print("building linchain-py (cargo build --release -p linchain-py) ...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "linchain-py"],
            cwd=REPO,
            check=True,
        )
    staging = Path(tempfile.mkdtemp(prefix="linchain_py_"))
    shutil.copy(lib, staging / "linchain_py.so")
    sys.path.insert(0, str(staging))
    import linchain_py

    return linchain_py


def splitmix64_f64(seed, n):
    """Reference implementation of the documented RNG stream."""
    mask = (1 << 64) - 1
    state = seed
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z ^= z >> 31
        out.append((z >> 11) * 2.0**-53)
    return out


def main():
    lc = load_module()

    # Cross-language determinism: Kaiming draws must replay the documented
    # SplitMix64 stream exactly.
    rows, cols, seed = 6, 4, 42
    m = lc.Matrix.kaiming_uniform(rows, cols, seed)
    bound = math.sqrt(6.0 / rows)
    expected = [-bound + 2.0 * bound * u for u in splitmix64_f64(seed, rows * cols)]
    flat = [v for row in m.tolist() for v in row]
    assert flat == expected, "RNG stream mismatch between Rust and Python"
    print("PASS rng stream reproduces in Python")

    # Zero-init identity: a fresh adapter is exactly the base layer.
    config = lc.AdapterConfig("linchain", 16, 12, [4, 4, 4], seed=7)
    w0 = lc.Matrix.uniform(16, 12, -1.0, 1.0, 99)
    adapter = lc.AdaptedLinear.init(config, w0, 7)
    x = lc.Matrix.uniform(3, 16, -1.0, 1.0, 5)
    assert adapter.forward(x).max_abs_diff(x.matmul(w0)) == 0.0
    assert adapter.delta_weight().frobenius_norm() == 0.0
    print("PASS zero-init adapter equals base layer")

    # Merge equivalence and functional collapse on a randomized adapter.
    adapter.randomize_uniform(-1.0, 1.0, 123)
    via_adapter = adapter.forward(x)
    via_merge = x.matmul(adapter.merge())
    assert via_adapter.max_abs_diff(via_merge) <= 1e-10
    collapsed = adapter.collapse_to_lora()
    assert adapter.delta_weight().max_abs_diff(collapsed.delta_weight()) <= 1e-12
    assert collapsed.param_names() == ["A", "B"]
    print("PASS merge equivalence and lora collapse")

    # Analytic gradients agree with finite differences for both losses.
    target = lc.Matrix.uniform(3, 12, -1.0, 1.0, 6)
    report = lc.grad_check_mse(adapter, x, target, tol=1e-5)
    assert report["pass"], report
    labels = [1, 0, 11]
    report = lc.grad_check_cross_entropy(adapter, x, labels, tol=1e-5)
    assert report["pass"], report
    assert set(report["groups"]) == {"A", "W1", "W2", "B"}
    print(f"PASS gradient checks (worst rel error {report['max_rel_error']:.2e})")

    # Parameter accounting, including the headline square-chain shape.
    big = lc.AdapterConfig("linchain", 4096, 4096, [16, 16, 16, 16])
    assert big.param_count() == 131840
    assert lc.AdapterConfig("lora", 4096, 4096, [16]).param_count() == 131072
    print("PASS parameter counts")

    # Gradient dependency structure: (n+2)(n+1) factor occurrences.
    deps = lc.trace_dependencies(3)
    assert deps["total_factor_occurrences"] == 20
    assert sorted(deps["dependencies"]["W2"]) == ["A", "B", "W1", "W3"]
    print("PASS gradient dependency report")

    # A short deterministic training run on the realizable recovery task.
    small = lc.AdapterConfig("linchain", 16, 16, [4, 4], seed=3)
    trace = lc.train_target_recovery(
        small, target_rank=4, epochs=60, learning_rate=1e-2,
        train_size=64, eval_size=32, batch_size=16, data_seed=2, run_seed=1,
    )
    assert len(trace) == 60
    first, last = trace[0], trace[-1]
    assert last[1] < 1e-3 < first[1], (first, last)
    rerun = lc.train_target_recovery(
        small, target_rank=4, epochs=60, learning_rate=1e-2,
        train_size=64, eval_size=32, batch_size=16, data_seed=2, run_seed=1,
    )
    assert trace == rerun
    print(f"PASS training run (loss {first[1]:.3f} -> {last[1]:.2e}, deterministic)")

    # Checkpoint round-trips bitwise.
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "adapter.ckpt")
        adapter.save(path)
        loaded = lc.AdaptedLinear.load(path)
        assert loaded.merge().max_abs_diff(adapter.merge()) == 0.0
        assert loaded.b.tolist() == adapter.b.tolist()
    print("PASS checkpoint round-trip")

    print("smoke test OK")


if __name__ == "__main__":
    main()
