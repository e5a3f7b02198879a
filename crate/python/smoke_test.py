#!/usr/bin/env python3
"""Smoke test for the Rust extension module.

Build the extension first:

    cargo build --release -p spqrx-py

then run this script; it locates the cdylib in target/, exposes it as the
module `spqrx_py`, fits a small tail-extended model on simulated data, and
checks a handful of sanity properties end to end.
"""

import math
import os
import shutil
import sys
import tempfile


def load_module():
    here = os.path.dirname(os.path.abspath(__file__))
    root = os.path.dirname(here)
    candidates = [
        os.path.join(root, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libspqrx_py.so", "libspqrx_py.dylib", "spqrx_py.dll")
    ]
    built = next((c for c in candidates if os.path.exists(c)), None)
    if built is None:
        sys.exit("extension not built; run: cargo build --release -p spqrx-py")
    stage = tempfile.mkdtemp(prefix="spqrx_py_")
    ext = ".pyd" if built.endswith(".dll") else ".so"
    shutil.copy(built, os.path.join(stage, "spqrx_py" + ext))
    sys.path.insert(0, stage)
    import spqrx_py

    return spqrx_py


def main():
    m = load_module()

    x, y = m.simulate("lognormal", 1500, seed=7)
    assert len(x) == 1500 and len(x[0]) == 3
    assert min(y) > 0

    model = m.fit_spqrx(
        x,
        y,
        k=12,
        hidden=[8, 8],
        p_a=0.85,
        p_b=0.97,
        c1=5.0,
        seed=7,
        max_epochs=120,
        batch_size=128,
    )
    assert model.mode == "spqrx"
    assert model.num_covariates == 3

    probe = [0.4, 0.5, 0.9]
    taus = [0.1, 0.5, 0.9, 0.99, 0.9995]
    qs = model.quantiles(probe, taus)
    assert all(b >= a for a, b in zip(qs, qs[1:])), f"quantiles not monotone: {qs}"

    # quantile/CDF round trip through the blended distribution
    for tau, q in zip(taus, qs):
        u = model.cdf(probe, q)
        assert abs(u - tau) < 1e-6, (tau, u)

    # density is positive beyond the training maximum (tail extrapolation)
    beyond = max(y) * 1.2
    assert model.density(probe, beyond) > 0

    # shape output exists and respects the activation range
    xi = model.xi(probe)
    assert -0.5 < xi < 0.7

    # persistence round trip preserves predictions exactly
    clone = m.Model.from_json(model.to_json())
    assert clone.quantile(probe, 0.9) == model.quantile(probe, 0.9)

    # PIT of the training data is roughly uniform
    u = model.pit(x[:500], y[:500])
    mean_u = sum(u) / len(u)
    assert abs(mean_u - 0.5) < 0.05, mean_u

    # variable importance: x3 is inert in this design
    vi = model.vi_quantile(x[:400], [0.5], bins=20)[0]
    assert vi[2] < max(vi[0], vi[1]), vi

    # truth helper agrees with the log-normal median formula
    med = m.true_quantile("lognormal", 0.5, [0.4, 0.5, 0.0])
    assert abs(med - math.exp(2.5)) < 1e-9

    print("smoke test passed")


if __name__ == "__main__":
    main()
