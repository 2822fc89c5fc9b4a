"""Smoke test for the ttcast Python extension.

Build the module first, then run this script:

    cargo build --release -p ttcast-py --features extension-module
    python3 python/smoke_test.py

When `import ttcast` fails, the script looks for the freshly built library
under target/{release,debug} and loads it under the module name.
"""

import importlib.machinery
import importlib.util
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import ttcast  # noqa: F401

        return ttcast
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libttcast_py.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("ttcast", str(lib))
            spec = importlib.util.spec_from_file_location("ttcast", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            sys.modules["ttcast"] = module
            return module
    sys.exit("ttcast extension not found; build it with "
             "`cargo build --release -p ttcast-py --features extension-module`")


def main():
    tt = load_module()
    print("ttcast", tt.__version__, "cells:", ", ".join(tt.CELL_KINDS))

    seq = tt.generate_synthetic("wave", [48, 2, 6, 6], seed=3)
    assert seq.shape == [48, 2, 6, 6, 2], seq.shape
    assert all(math.isfinite(v) for v in seq.values())

    pcs = tt.compress(seq, 36)
    back = pcs.reconstruct()
    err = max(abs(a - b) for a, b in zip(back.values(), seq.values()))
    assert err < 1e-4, f"full-rank round trip error {err}"
    sv = pcs.singular_values(0, 0)
    assert all(a >= b for a, b in zip(sv, sv[1:])), "singular values not sorted"

    net = tt.Network("pitt-wave", [30, 16, 2], preset="paper")
    assert 900_000 <= net.param_count <= 1_100_000, net.param_count
    assert net.param_count < 0.25 * net.dense_equivalent_count

    reports = tt.evaluate(seq.slice(0, 10), seq.slice(0, 10))
    assert reports[0]["mean_ssim"] == 1.0 and reports[0]["mean_mse"] == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        trainer = tt.Trainer(seq, cell="pitt-wave", pcs=4, context=4, horizon=4,
                             train_fraction=0.75, max_epochs=2, seed=1)
        for _ in range(2):
            row = trainer.run_epoch()
            print("epoch {epoch}: val_mse {val_mse:.4f} ssim {val_ssim:.3f}".format(**row))
            assert math.isfinite(row["val_mse"])
        ckpt = tmp / "model.ckpt"
        trainer.save_checkpoint(str(ckpt))

        physical, pc = tt.predict(str(ckpt), seq.slice(36, 40), 4)
        assert physical.shape == [4, 2, 6, 6, 2], physical.shape
        assert pc.shape == [4, 2, 4, 2], pc.shape

        resumed = tt.Trainer.resume(str(ckpt), seq, 4, 0.75)
        assert resumed.epoch == 2

        path = tmp / "w.vseq"
        seq.save(str(path))
        assert tt.VolumeSequence.load(str(path)).values() == seq.values()
        code = tt.run_cli(["render", "--in", str(path), "--out", str(tmp / "f.ppm")])
        assert code == 0 and (tmp / "f.ppm").read_bytes().startswith(b"P6\n6 6\n255\n")
        assert tt.run_cli(["render", "--in", str(tmp / "missing.vseq"), "--out", "x.ppm"]) == 3

    try:
        tt.generate_synthetic("diffusion", [10, 1, 4, 4], alpha=0.5)
    except ValueError as e:
        assert "alpha" in str(e)
    else:
        raise AssertionError("unstable alpha accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
