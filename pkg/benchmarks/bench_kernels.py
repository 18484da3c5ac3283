"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs once with ``PBFCONTROL_NUMBA=1`` and once with ``=0``; the
flag is read on every kernel call, so both run in one process.  A warm-up
call absorbs JIT compilation before timing starts.
"""
from __future__ import annotations

import argparse
import json
import os
import timeit

import numpy as np

from pbfcontrol import kernels
from pbfcontrol._accel import HAVE_NUMBA
from pbfcontrol.fem import LTI_ALUMINUM, thermal_system
from pbfcontrol.gramian import discretize
from pbfcontrol.mesh import build_mesh
from pbfcontrol.shapes import block, rectangle
from pbfcontrol.structural import graph_from_pattern, maximum_matching, ssc_check
from pbfcontrol.system import build_A, build_B0, build_B_uniform


def _cases():
    rng = np.random.default_rng(0)
    big2d = build_mesh(rectangle(120, 60))
    big3d = build_mesh(block(14, 14, 10))
    conn = np.asarray(big3d.elements, dtype=np.int64)
    ke = rng.standard_normal((8, 8))

    q = rng.uniform(0, 10, size=(2, 200_000))
    qw = rng.uniform(0, 1, size=200_000)

    sys_m = thermal_system(build_mesh(rectangle(60, 30)), LTI_ALUMINUM)
    match_graph = graph_from_pattern(build_A(sys_m), np.eye(sys_m.n)[:, :3])

    small = build_mesh(rectangle(6, 2))
    small_sys = thermal_system(small, LTI_ALUMINUM)
    ssc_graph = graph_from_pattern(build_A(small_sys), build_B0(small, small_sys))

    gm = build_mesh(rectangle(20, 8))
    gs = thermal_system(gm, LTI_ALUMINUM)
    Ad, Bd = discretize(build_A(gs).toarray(), build_B_uniform(gm, gs), 1e-3, "zoh")

    return {
        f"scatter_coo ({len(conn)} hex elements)": lambda: kernels.scatter_coo(conn, ke),
        "gaussian_weighted (2e5 points)":
            lambda: kernels.gaussian_weighted(q[0], q[1], qw, 5.0, 5.0, 0.5, 1e3),
        f"maximum_matching (n={sys_m.n})": lambda: maximum_matching(match_graph),
        f"ssc_check (n={small_sys.n}, exhaustive)":
            lambda: ssc_check(ssc_graph, n_limit=20),
        f"gramian_sum (n={gs.n}, 200 steps)": lambda: kernels.gramian_sum(Ad, Bd, 200),
        f"build_mesh + assembly ({len(big2d.elements)} quads)":
            lambda: thermal_system(build_mesh(rectangle(120, 60)), LTI_ALUMINUM),
    }


def _time(fn, repeat: int) -> float:
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path can be timed")

    rows = []
    for name, fn in _cases().items():
        times = {}
        for flag in ("1", "0") if HAVE_NUMBA else ("0",):
            os.environ["PBFCONTROL_NUMBA"] = flag
            times["numba" if flag == "1" else "numpy"] = _time(fn, args.repeat)
        rows.append({"case": name, **times})
    os.environ.pop("PBFCONTROL_NUMBA", None)

    width = max(len(r["case"]) for r in rows)
    print(f"{'case':<{width}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  {'speedup':>8}")
    for r in rows:
        nb = r.get("numba")
        sp = f"{r['numpy'] / nb:8.1f}" if nb else f"{'-':>8}"
        nb_s = f"{1e3 * nb:11.2f}" if nb else f"{'-':>11}"
        print(f"{r['case']:<{width}}  {nb_s}  {1e3 * r['numpy']:11.2f}  {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
