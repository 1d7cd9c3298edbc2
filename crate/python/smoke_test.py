"""Smoke test for the Python extension.

Builds the extension with cargo (unless HYDROSTAB_LIB points at a built library),
imports it and exercises each entry point on a small grid.
"""

import json
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def locate_library():
    lib = os.environ.get("HYDROSTAB_LIB")
    if lib:
        return pathlib.Path(lib)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "hydrostab-python", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    for name in ("libhydrostab_py.so", "libhydrostab_py.dylib", "hydrostab_py.dll"):
        path = ROOT / "target" / "release" / name
        if path.exists():
            return path
    sys.exit("built library not found")


def main():
    tmp = pathlib.Path(tempfile.mkdtemp())
    suffix = ".pyd" if sys.platform == "win32" else ".so"
    shutil.copy(locate_library(), tmp / ("hydrostab" + suffix))
    sys.path.insert(0, str(tmp))
    import hydrostab

    st = hydrostab.State(12, 12, "linear", {"a": 1.0, "b": 1.0}, mu=0.01, sigma=0.5)
    assert st.shape == (12, 12)
    assert st.classification == "Unstable"
    lam = st.growth_rate()
    assert lam is not None and 0.0 < lam < st.upper_bound ** 0.5
    phi, iters, resid = st.phi(lam)
    assert abs(phi - lam * lam) <= 1e-6 * lam * lam, (phi, lam)
    rows = st.simulate("linear", amplitude=1e-3, t_end=0.5)
    assert rows[-1]["v_l2"] > rows[0]["v_l2"]

    stable = hydrostab.State(8, 8, "linear", {"a": 1.0, "b": -0.1}, mu=0.01, sigma=0.5)
    assert stable.growth_rate() is None

    state_dir = tmp / "state"
    st.save(str(state_dir))
    again = hydrostab.State.load(str(state_dir))
    assert again.rho0 == st.rho0

    try:
        hydrostab.check_config("[grid]\nnx = -4\n")
    except ValueError as err:
        assert "grid.nx" in str(err)
    else:
        raise AssertionError("bad config accepted")
    echo = json.loads(
        hydrostab.check_config('[profile]\nkind = "linear"\na = 1\nb = 1\n[physics]\nmu = 0.01\n')
    )
    assert echo["grid"]["nx"] == 32

    print("python smoke test passed (Lambda = %.6f)" % lam)
    shutil.rmtree(tmp, ignore_errors=True)


if __name__ == "__main__":
    main()
