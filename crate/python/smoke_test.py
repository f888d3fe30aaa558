#!/usr/bin/env python3
"""Smoke test for the gwnet_py extension module.

Builds nothing itself: it loads the cdylib produced by
`cargo build -p gwnet-py` (release preferred) and exercises the exposed
API end to end on miniature problems: conductivity sampling, the
steady-state solve, dataset generation and round-tripping, surrogate
construction, training, checkpointing, prediction, MC-dropout
uncertainty, and evaluation.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libgwnet_py.so",
        REPO / "target" / "debug" / "libgwnet_py.so",
        REPO / "target" / "release" / "libgwnet_py.dylib",
        REPO / "target" / "debug" / "libgwnet_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("no built extension found; run `cargo build -p gwnet-py` first")
    stage = Path(tempfile.mkdtemp(prefix="gwnet_py_"))
    shutil.copy2(built, stage / "gwnet_py.so")
    sys.path.insert(0, str(stage))
    import gwnet_py

    return gwnet_py


def check(condition, message):
    if not condition:
        sys.exit(f"FAIL: {message}")
    print(f"ok: {message}")


def main():
    gw = load_module()

    # Conductivity sampling: correct size, exactly the configured classes.
    field = gw.sample_conductivity(24, 24, seed=3, correlation_length=8.0, n_classes=5)
    check(len(field) == 24 * 24, "conductivity field has one value per cell")
    classes = sorted(set(field))
    expected = [0.1 + 0.9 * i / 4 for i in range(5)]
    check(
        all(any(math.isclose(c, e, abs_tol=1e-12) for e in expected) for c in classes),
        f"conductivity values drawn from the 5-class set (saw {classes})",
    )

    # Steady-state solve: fixed cells kept, interior obeys the maximum
    # principle between the well head and the boundary head.
    well = (12, 12, 0.6)
    head = gw.solve_head(24, 24, field, [well], boundary_head=1.0, tol=1e-10)
    check(len(head) == 24 * 24, "head field has one value per cell")
    check(math.isclose(head[12 * 24 + 12], 0.6, abs_tol=1e-12), "well head is imposed exactly")
    check(math.isclose(head[0], 1.0, abs_tol=1e-12), "boundary head is imposed exactly")
    eps = 1e-9
    check(
        all(0.6 - eps <= h <= 1.0 + eps for h in head),
        "solved heads stay between well and boundary values",
    )

    # Dataset generation and round-trip.
    train = gw.Dataset.generate(16, 16, 12, seed=5)
    val = gw.Dataset.generate(16, 16, 4, seed=6)
    check(len(train) == 12 and train.grid() == (16, 16), "dataset generation")
    check(len(train.input(0)) == 3 * 256 and len(train.target(0)) == 256, "sample layout")
    check("seed = 5" in train.manifest(), "manifest records the seed")
    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "train.gwds")
        train.save(path)
        reloaded = gw.Dataset.load(path)
        check(
            len(reloaded) == len(train) and reloaded.target(3) == train.target(3),
            "dataset save/load round-trip",
        )

    # Surrogate: build, train briefly, checkpoint round-trip, predict.
    model = gw.Surrogate("attention-unet", 16, 16, seed=1, width_divisor=8)
    check(model.variant() == "attention_unet", "variant accessor")
    check(model.num_parameters() > 10_000, "parameter count is plausible")
    check("down1" in model.parameter_table(), "parameter table lists blocks")

    history = model.fit(train, val, epochs=2, batch_size=4, seed=1)
    check(len(history) == 3 and history[0][0] == 0, "history holds baseline plus 2 epochs")
    check(all(math.isfinite(t) and math.isfinite(v) for _, t, v in history), "losses finite")
    check(history[-1][1] < history[0][1], "training reduced the train loss")

    pred = model.predict(train.input(0), 16, 16)
    check(len(pred) == 256 and all(0.0 < p < 1.0 for p in pred), "prediction in (0, 1)")

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = str(Path(tmp) / "model.gwck")
        model.save(ckpt)
        again = gw.Surrogate.load(ckpt)
        check(again.predict(train.input(0), 16, 16) == pred, "checkpoint round-trip predicts identically")

    mean, std = model.mc_dropout(train.input(0), 16, 16, passes=8, seed=2)
    check(len(mean) == 256 and len(std) == 256, "mc-dropout map sizes")
    check(all(s >= 0.0 for s in std) and max(std) > 0.0, "dropout produces spread")

    rmse, r2 = model.evaluate(val)
    check(math.isfinite(rmse) and rmse > 0.0 and r2 <= 1.0, f"evaluate: rmse {rmse:.3e}, r2 {r2:.3f}")

    # Errors surface as exceptions, not crashes.
    try:
        gw.solve_head(16, 16, [1.0] * 256, [(0, 0, 0.5)])
    except ValueError:
        print("ok: invalid well placement raises ValueError")
    else:
        sys.exit("FAIL: boundary well should be rejected")

    print("smoke test passed")


if __name__ == "__main__":
    main()
