"""Quick check that the compiled `cardioem` extension imports and runs.

Build and install it first:

    pip install maturin
    pip install --no-build-isolation -e crates/py

Set CARDIOEM_FULL=1 to also run a coupled beat on the smallest mesh
(takes a few minutes).
"""

import math
import os
import sys
import tempfile

import cardioem


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    cfg = cardioem.Config("desk")
    check(len(cfg.hash) == 64, "config hash is a sha256 hex digest")
    same = cardioem.Config("desk", cfg.to_toml())
    check(same.hash == cfg.hash, "TOML round trip keeps the hash")

    try:
        cfg.overlay("[mechanics]\nno_such_key = 1\n")
    except ValueError as e:
        check("line 2" in str(e), f"unknown key rejected with its line ({e})")
    else:
        check(False, "unknown key rejected")

    tiny = cfg.overlay(
        "[geometry]\ndisc_core = 2\ndisc_ring = 2\nlv_layers = 1\ncavity_layers = 1\nrv_layers = 1\n"
    )
    mesh = cardioem.build_mesh(tiny)
    check(len(mesh["elements"]) > 0 and len(mesh["nodes"]) > 0, "mesh builds")

    fib = cardioem.fibers(tiny)
    worst = 0.0
    for f, s, n in zip(fib["f0"], fib["s0"], fib["n0"]):
        for a, b, want in ((f, f, 1), (s, s, 1), (n, n, 1), (f, s, 0), (f, n, 0), (s, n, 0)):
            worst = max(worst, abs(sum(x * y for x, y in zip(a, b)) - want))
    check(worst < 1e-10, f"fiber frames orthonormal ({worst:.1e})")

    circ = cardioem.circulation(cfg, beats=3)
    vol = circ["total_volume"]
    drift = max(abs(v - vol[0]) for v in vol)
    check(drift < 0.01, f"closed loop conserves volume ({drift:.1e} mL)")
    check(all(math.isfinite(p) for p in circ["p_lv"]), "LV pressure finite")

    if os.environ.get("CARDIOEM_FULL") == "1":
        with tempfile.TemporaryDirectory() as out:
            run = tiny.overlay(
                f"[output]\ndir = '{out}'\nbeats = 1\nsnapshot_every = 0\ncheckpoint_every = 0\n"
                "[preflow]\nemulator_beats = 0\n"
            )
            bio, steps = cardioem.simulate(run)
            check(0 < bio["ef_lv_percent"] < 100, f"LV EF {bio['ef_lv_percent']:.1f} %")
            h, cols = cardioem.read_log(os.path.join(out, "steps.csv"))
            check(h == run.hash, "steps.csv carries the config hash")
            check(len(cols["t_ms"]) == len(steps["t_ms"]), "log matches returned steps")

    print("smoke test passed")


if __name__ == "__main__":
    main()
