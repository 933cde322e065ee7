"""Build the extension module, import it and sanity-check a few values.

Run from the repository root:  python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def build() -> pathlib.Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "elmg-python"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libelmg.so"
    if not lib.exists():
        sys.exit(f"extension not found at {lib}")
    return lib


def main() -> None:
    lib = build()
    with tempfile.TemporaryDirectory() as tmp:
        shutil.copy(lib, pathlib.Path(tmp) / "elmg.so")
        sys.path.insert(0, tmp)
        import elmg

        times = [0.1 * k for k in range(21)]
        f = elmg.fotoc(20, 4.0, 1.0, 0.01, times)
        assert len(f) == len(times)
        assert all(0.0 <= v <= 1.0 + 1e-12 for v in f)
        assert elmg.fotoc(20, 4.0, 1.0, 0.0, times) == [1.0] * len(times)

        # Symmetric-phase complexity approaches 2 t^2 sqrt(1 + Omega^2) at the line.
        c = elmg.complexity(4.0, 0.5, 10.0)
        assert 0.0 < c < 2 * 100 * math.sqrt(17)

        g = elmg.metric(4.0, 1.0, 2.0, 0.01)
        assert len(g) == 3 and all(abs(g[a][b] - g[b][a]) < 1e-12 for a in range(3) for b in range(3))

        r = elmg.curvature_near_line(4.0, 1e-3, 4.0, 0.01)
        assert abs(r + 4.0) < 0.2, r
        far = elmg.curvature(4.0, math.sqrt(17) / 2 - 0.05, 4.0, 0.01)
        assert abs(far + 4.0) < 0.2, far

        try:
            elmg.fotoc(20, 4.0, 1.0, 0.01, times, generator="nope")
        except ValueError:
            pass
        else:
            raise AssertionError("bad generator accepted")

        print(f"elmg {elmg.__version__}: smoke test passed (F(2) = {f[-1]:.12f}, R = {r:.4f})")


if __name__ == "__main__":
    main()
