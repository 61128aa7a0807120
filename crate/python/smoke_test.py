#!/usr/bin/env python3
"""Smoke test for the ccmcf_py extension module.

Builds the cdylib if needed, imports it, and checks a handful of known
values end to end: Haar unitarity, the cascaded link-MDL metric, the
linear-SNR anchor of the reference link, the SNR estimator, and a tiny
nonlinear scenario run.
"""

import math
import os
import random
import re
import shutil
import subprocess
import sys
import tempfile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.path.join(REPO, "target", "release", "libccmcf_py.so"),
        os.path.join(REPO, "target", "debug", "libccmcf_py.so"),
    ]
    so = next((p for p in candidates if os.path.exists(p)), None)
    if so is None:
        print("building ccmcf-py (release)...")
        subprocess.run(
            ["cargo", "build", "--release", "-p", "ccmcf-py"], cwd=REPO, check=True
        )
        so = candidates[0]
    stage = tempfile.mkdtemp(prefix="ccmcf_py_")
    shutil.copy(so, os.path.join(stage, "ccmcf_py.so"))
    sys.path.insert(0, stage)
    import ccmcf_py

    return ccmcf_py


def check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name} {detail}")
    if not ok:
        sys.exit(1)


def main():
    m = load_module()
    print(f"ccmcf_py version {m.version()}")

    # Haar unitary: Q^H Q = I.
    q = m.haar_unitary(8, seed=3)
    defect = m.unitarity_defect(q)
    check("haar unitarity", defect < 1e-12, f"(defect {defect:.2e})")

    # Singular gains of a known diagonal matrix: diag(2, 0.5).
    g = m.singular_gains([[2.0 + 0j, 0j], [0j, 0.5 + 0j]])
    check(
        "singular gains",
        abs(g[0] + 2 * math.log(2)) < 1e-12 and abs(g[1] - 2 * math.log(2)) < 1e-12,
        f"(g = {g})",
    )

    # System gains of one cascade sum to zero (unit determinant).
    gains = m.system_gains(8, 256, 0.014, seed=5)
    check("trace-free system gains", abs(sum(gains)) < 1e-9, f"(sum {sum(gains):.2e})")

    # Eq.-(3) link MDL of ten 1 dB elements: 4.8 +/- 0.3 dB at 2000 seeds.
    sigma_1db = 1.0 / (2.0 * 4.342944819032518)
    mdl = m.mean_link_mdl_db(8, 10, sigma_1db, realizations=2000, seed=7)
    check("link MDL metric", abs(mdl - 4.86) < 0.3, f"({mdl:.3f} dB)")

    # Linear-SNR anchor: reference link without MDL/SMD -> 19.86 dB.
    toml = m.preset_toml("fig3a_link")
    toml = toml.replace('engine = "ssfm"', 'engine = "matrix-oracle"')
    toml = toml.replace('tags = "all"', 'tags = "ase"')
    toml = toml.replace("num_realizations = 500", "num_realizations = 2")
    toml = re.sub(r"element_sigma_g = [0-9.eE+-]+", "element_sigma_g = 0.0", toml)
    out = m.run_scenario(toml, workers=2)
    snr = out["moments"][0]["mean_snr_db"]
    check("linear SNR anchor", abs(snr - 19.86) < 0.05, f"({snr:.3f} dB)")

    # SNR estimator on synthetic 20 dB AWGN.
    rng = random.Random(11)
    n = 20000
    tx = [complex(rng.gauss(0, 0.5**0.5), rng.gauss(0, 0.5**0.5)) for _ in range(n)]
    sig = (0.01 / 2.0) ** 0.5
    rx = [z + complex(rng.gauss(0, sig), rng.gauss(0, sig)) for z in tx]
    est = m.estimate_snr(rx, rx, tx, tx)
    check("snr estimator", abs(est["snr_db"] - 20.0) < 0.3, f"({est['snr_db']:.2f} dB)")

    # Scenario validation rejects a physically inconsistent config.
    bad = m.preset_toml("fig3a_desk").replace("spacing_hz = 75000000000.0", "spacing_hz = 60000000000.0")
    try:
        m.validate_scenario(bad)
        check("validation rejects bad spacing", False)
    except ValueError:
        check("validation rejects bad spacing", True)

    # Tiny nonlinear run end to end (single channel, one short span).
    toml = m.preset_toml("fig3a_desk")
    toml = toml.replace('tags = "all"', 'tags = "nli"')
    toml = toml.replace("num_realizations = 100", "num_realizations = 1")
    toml = toml.replace("num_spans = 2", "num_spans = 1")
    toml = toml.replace("num_channels = 3", "num_channels = 1")
    toml = toml.replace("symbols_per_block = 8192", "symbols_per_block = 2048")
    out = m.run_scenario(toml, workers=2)
    snr = out["moments"][0]["mean_snr_db"]
    check("nonlinear scenario run", 20.0 < snr < 60.0, f"(SNR_NLI {snr:.2f} dB)")

    print("smoke test complete: all checks passed")


if __name__ == "__main__":
    main()
