"""Command-line front end.

Every subcommand reads one JSON config, writes its artifacts atomically and
prints a one-line JSON summary.  Exit codes: 0 success, 2 configuration or
missing-artifact error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as pio
from .errors import ConfigError, NumericalError
from .fem import LTI_ALUMINUM, TRUTH_ALUMINUM, MaterialProps, thermal_system
from .mesh import BuildGeometry, build_mesh

logger = logging.getLogger("pbfcontrol")

COMMANDS = ("mesh", "assemble", "analyze-structural", "analyze-classical", "energy", "enkf",
            "report")
PRIMARY = {"mesh": "mesh.json", "assemble": "assemble.json",
           "analyze-structural": "structural.json", "analyze-classical": "classical.json",
           "energy": "energy.json", "enkf": "enkf.json", "report": "report.json"}


# ---------------------------------------------------------------------------
# config sections
# ---------------------------------------------------------------------------

_SHAPES = {"rectangle", "block", "spool", "l_shape", "two_towers"}


def geometry_from_config(doc: dict) -> tuple[BuildGeometry, float]:
    """Explicit occupancy document or a named reference shape."""
    if "shape" not in doc:
        return BuildGeometry.from_dict(doc)
    pio.check_keys(doc, {"shape", "params", "voxel_size_mm", "element_size_mm"}, "geometry")
    from . import shapes
    name = doc["shape"]
    if name not in _SHAPES:
        raise ConfigError(f"unknown shape {name!r}; expected one of {sorted(_SHAPES)}")
    params = dict(doc.get("params", {}))
    vox = float(doc.get("voxel_size_mm", 1.0))
    try:
        if name == "two_towers":
            g = shapes.two_towers(**params)
            g = BuildGeometry(g.occupancy, vox)
        else:
            g = getattr(shapes, name)(**params, voxel_size=vox)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for shape {name!r}: {exc}") from exc
    return g, float(doc.get("element_size_mm", vox))


class Run:
    """Parsed config plus lazily built mesh and models."""

    def __init__(self, cfg: dict, seed: int | None):
        self.cfg = cfg
        self.seed = int(seed if seed is not None else cfg.get("seed", 0))
        self._mesh = None
        self._case = None

    def section(self, name: str, allowed: set | None = None) -> dict:
        doc = self.cfg.get(name, {})
        return pio.check_keys(doc, allowed, name) if allowed is not None else doc

    @property
    def material(self) -> MaterialProps:
        doc = self.cfg.get("material")
        return MaterialProps.from_dict(doc) if doc else LTI_ALUMINUM

    @property
    def truth_material(self) -> MaterialProps:
        doc = self.cfg.get("truth_material")
        return MaterialProps.from_dict(doc) if doc else TRUTH_ALUMINUM

    @property
    def mesh(self):
        if self._mesh is None:
            if "geometry" not in self.cfg:
                raise ConfigError("config needs a geometry section")
            geo, h = geometry_from_config(self.cfg["geometry"])
            self._mesh = build_mesh(geo, h)
        return self._mesh

    @property
    def lasers(self):
        from .system import LaserConfig
        doc = self.cfg.get("lasers")
        return LaserConfig.from_dict(doc) if doc else None

    @property
    def camera(self):
        from .system import CameraConfig
        return CameraConfig.from_dict(self.cfg.get("camera", {}))

    @property
    def tophat(self):
        from .system import TopHat
        doc = self.cfg.get("tophat")
        if not doc:
            return None
        pio.check_keys(doc, {"tau_s", "t0_s", "t1_s", "resolution"}, "tophat")
        return TopHat(float(doc["tau_s"]), float(doc.get("t0_s", 0.0)), float(doc["t1_s"]),
                      int(doc.get("resolution", 8)))

    @property
    def case(self):
        if self._case is None:
            from .system import build_case
            sysm = thermal_system(self.mesh, self.material)
            eps_B = float(self.section("analysis").get("eps_B", 1e-12))
            self._case = build_case(int(self.cfg.get("case", 1)), self.mesh, sysm, self.lasers,
                                    self.camera, self.tophat, eps_B=eps_B)
        return self._case


_ANALYSIS_KEYS = {"eps_B", "T_s", "dt_s", "discretization", "K", "trials", "ssc_n_limit",
                    "center_mm", "radii_mm", "normalizations", "target_radius_mm"}


def _analysis(run: Run) -> dict:
    return pio.check_keys(run.cfg.get("analysis", {}), _ANALYSIS_KEYS, "analysis")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_mesh(run: Run, out: Path, name: str) -> dict:
    mesh = run.mesh
    pio.write_json(out / name, {"tool_version": __version__, **mesh.to_dict()})
    return {"nodes": mesh.n_nodes, "elements": mesh.n_elements,
            "omega": int(mesh.omega.sum()), "lambda": int(mesh.lam.sum()),
            "gamma": int(mesh.gamma.sum()), "grounded": bool(mesh.grounded)}


def cmd_assemble(run: Run, out: Path, name: str) -> dict:
    from .gramian import spectrum_check
    case = run.case
    A = case.A.toarray()
    B, C = case.B_at(0.0), case.C_at(0.0)
    spectrum = spectrum_check(A, case.sys.m, case.sys.K)
    hurwitz = spectrum["max_real"] < 0
    doc = {"tool_version": __version__, "case": case.case_id, "n": case.n, "m": case.m,
           "p": case.p, "input_kind": case.input_kind, "B_varies": case.B_varies,
           "C_varies": case.C_varies, "spectrum": spectrum, "hurwitz": hurwitz,
           "real_spectrum": spectrum["max_imag_rel"] < 1e-8,
           "tolerances": {"real_spectrum_imag_rel": 1e-8, "hurwitz": "max Re(lambda) < 0"},
           "files": ["A.csv", "B.csv", "C.csv"]}
    pio.write_matrix_csv(out / "A.csv", A)
    pio.write_matrix_csv(out / "B.csv", B)
    pio.write_matrix_csv(out / "C.csv", C)
    pio.write_json(out / name, doc)
    return {"n": case.n, "m": case.m, "p": case.p, "hurwitz": hurwitz}


def cmd_structural(run: Run, out: Path, name: str) -> dict:
    from .structural import (free_components, graph_from_pattern, instantiate_and_rank,
                             ssc_check, structural_report)
    from .system import omega_free_nodes
    an = _analysis(run)
    case = run.case
    graph = graph_from_pattern(case.A, case.B_pattern(), case.C_pattern())
    comps = free_components(run.mesh, case.sys)
    omega = np.zeros(case.n, dtype=bool)
    omega[case.sys.global_to_free[omega_free_nodes(run.mesh, case.sys)]] = True
    rep = structural_report(graph, comps, omega, case.case_id).to_dict()
    limit = int(an.get("ssc_n_limit", 20))
    if case.n <= limit:
        ssc = ssc_check(graph, n_limit=limit).to_dict()
    else:
        ssc = {"skipped": f"n = {case.n} exceeds exhaustive limit {limit}"}
    trials = int(an.get("trials", 100))
    if case.n <= 200:
        inst = instantiate_and_rank(case.A, case.B_pattern(), seed=run.seed,
                                    trials=trials).to_dict()
    else:
        inst = {"skipped": f"n = {case.n} exceeds dense rank limit 200"}
    doc = {"tool_version": __version__, "structural": rep, "ssc": ssc,
           "instantiation": inst, "seed": run.seed,
           "tolerances": {"ssc_n_limit": limit,
                          "kalman_rank": "max(shape) * eps * sigma_max on shifted, scaled A"}}
    pio.write_json(out / name, doc)
    return {"SC": rep["SC"], "SO": rep["SO"], "SSC": ssc.get("SSC"),
            "full_rank_fraction": inst.get("fraction")}


def cmd_classical(run: Run, out: Path, name: str) -> dict:
    from .gramian import (discretize, eigendecompose_real, gramian_closed_form, gramian_finite,
                          rank_tests, spectral_radius)
    an = _analysis(run)
    case = run.case
    A = case.A.toarray()
    eig = eigendecompose_real(case.sys.m, case.sys.K)
    T = float(an.get("T_s", 1.0))
    pd_rtol = 1e-10
    grams = {}
    for kind, G, varies in (("controllability", case.B_at, case.B_varies),
                            ("observability", case.C_at, case.C_varies)):
        W = gramian_finite(A, G, 0.0, T, kind=kind).W if varies \
            else gramian_closed_form(A, G(0.0), T, kind)
        lam = np.linalg.eigvalsh(W)
        grams[kind] = {"min_eig": float(lam[0]), "trace": float(np.trace(W)),
                       "pd": bool(lam[0] > pd_rtol * np.trace(W)),
                       "method": "simpson" if varies else "augmented_exponential"}
    ctrl = rank_tests(A, B=case.B_at(0.0))
    obs = rank_tests(A, C=case.C_at(0.0))
    dt = float(an.get("dt_s", 1e-4))
    disc = {}
    for method in ("bilinear", "zoh"):
        Ad, _ = discretize(A, case.B_at(0.0), dt, method)
        rho = spectral_radius(Ad)
        disc[method] = {"spectral_radius": rho, "stable": rho < 1}
    pio.write_csv(out / "spectrum.csv", ["index", "eigenvalue"],
                  [(i, float(v)) for i, v in enumerate(eig.values)])
    doc = {"tool_version": __version__, "case": case.case_id, "T_s": T, "dt_s": dt,
           "hurwitz": bool(eig.values.max() < 0), "distinct_eigenvalues": eig.distinct,
           "controllability": ctrl.to_dict(), "observability": obs.to_dict(),
           "gramians": grams, "discretization": disc,
           "tolerances": {"gramian_pd_rtol_of_trace": pd_rtol,
                          "cluster_rtol": eig.rtol,
                          "rank": "max(shape) * eps * sigma_max"}}
    pio.write_json(out / name, doc)
    return {"kalman_rank": ctrl.kalman_rank, "n": ctrl.n, "Wc_pd": grams["controllability"]["pd"],
            "Wo_pd": grams["observability"]["pd"]}


def cmd_energy(run: Run, out: Path, name: str) -> dict:
    from .energy import (REACH_RTOL, discrete_gramians, energy_sweep, min_control_energy,
                         modal_bounds, radial_target)
    from .gramian import discretize
    an = _analysis(run)
    case = run.case
    if case.B_varies or case.C_varies:
        raise ConfigError("energy analysis needs constant B and C (case 1 with a fixed camera)")
    A = case.A.toarray()
    dt = float(an.get("dt_s", 1e-4))
    method = an.get("discretization", "zoh")
    K = int(an.get("K", 1000))
    B, C = case.B_at(0.0), case.C_at(0.0)
    Ad, Bd = discretize(A, B, dt, method)
    Wc, Wo = discrete_gramians(Ad, Bd, C, K)
    coords = run.mesh.coords[case.sys.free]
    top = coords[:, -1].max()
    center = an.get("center_mm")
    if center is None:
        sel = coords[:, -1] == top
        center = [*coords[sel, :-1].mean(axis=0), top]
    center = np.asarray(center, dtype=float)
    h = run.mesh.h
    radii = np.asarray(an.get("radii_mm", h * np.arange(1, 6)), dtype=float)
    sweeps = {}
    for norm in an.get("normalizations", ["const_T", "unit_norm"]):
        sw = energy_sweep(coords, Ad, C, center, radii, norm, K, Wo=Wo)
        pio.write_csv(out / f"sweep_{norm}.csv", ["radius_mm", "E_obs", "nodes"], sw.to_csv_rows())
        sweeps[norm] = {"energy": sw.energy, "strictly_increasing": sw.strictly_increasing(),
                        "non_increasing": sw.non_increasing(), "growth_ratio": sw.growth_ratio()}
    table = modal_bounds(Ad, Bd, K)
    pio.write_csv(out / "eta_star.csv", ["mode_index", "eigenvalue", "eta_star"], table.rows())
    r_target = float(an.get("target_radius_mm", radii[0]))
    ctrl = min_control_energy(Ad, Bd, radial_target(coords, center, r_target, "unit_norm"), K,
                              Wc=Wc)
    doc = {"tool_version": __version__, "case": case.case_id, "K": K, "dt_s": dt,
           "discretization": method, "center_mm": center, "radii_mm": radii,
           "sweeps": sweeps, "min_control_energy": ctrl.to_dict(),
           "target_radius_mm": r_target,
           "tolerances": {"reach_rtol": REACH_RTOL, "pinv": "n * eps * s_max",
                          "non_increasing": "one rise of at most 1 % allowed"}}
    pio.write_json(out / name, doc)
    return {"K": K, **{f"{k}_growth": v["growth_ratio"] for k, v in sweeps.items()},
            "reachable": ctrl.reachable}


def cmd_enkf(run: Run, out: Path, name: str) -> dict:
    from .enkf import FilterConfig, NoiseModel, part_a_analogue, raster_window, run_filter
    f = pio.check_keys(run.cfg.get("filter", {}),
                       {"preset", "N", "dt_s", "t_final_s", "process_power_mW",
                        "measurement_power_K", "filter_process_power_mW", "fine_factor",
                        "quantization"}, "filter")
    if f.get("preset") == "part_a_analogue":
        cfg = part_a_analogue(seed=run.seed)
    elif f.get("preset") is not None:
        raise ConfigError(f"unknown filter preset {f['preset']!r}")
    else:
        if run.lasers is None:
            raise ConfigError("enkf needs a lasers section or a preset")
        cfg = FilterConfig(run.mesh, run.lasers, run.camera, run.material, run.truth_material,
                           seed=run.seed)
    over = {}
    mp = float(f.get("measurement_power_K", cfg.noise.measurement_power))
    if "process_power_mW" in f or "measurement_power_K" in f:
        over["noise"] = NoiseModel(float(f.get("process_power_mW", cfg.noise.process_power)), mp)
    if "filter_process_power_mW" in f or "measurement_power_K" in f:
        base = cfg.filter_noise or cfg.noise
        over["filter_noise"] = NoiseModel(
            float(f.get("filter_process_power_mW", base.process_power)), mp)
    for key, attr, conv in (("N", "N", int), ("dt_s", "dt", float), ("t_final_s", "t_final", float),
                            ("fine_factor", "fine_factor", int), ("quantization", "quantization", str)):
        if key in f:
            over[attr] = conv(f[key])
    if over:
        cfg = FilterConfig(**{**cfg.__dict__, **over})
    res = run_filter(cfg)
    summ = res.summary()
    try:
        trend = res.late_trend(raster_window(cfg.lasers, cfg.dt))
    except ConfigError as exc:
        trend = {"skipped": str(exc)}
    err = res.error
    rows = ((k, i, float(err[k, i])) for k in range(err.shape[0]) for i in range(err.shape[1]))
    pio.write_csv(out / "errors.csv", ["k", "node", "error"], rows)
    eo = res.error_ol
    rows = ((k, i, float(eo[k, i])) for k in range(eo.shape[0]) for i in range(eo.shape[1]))
    pio.write_csv(out / "errors_ol.csv", ["k", "node", "error"], rows)
    pio.write_csv(out / "rms.csv", ["k", "t_s", "rms_cl", "rms_ol"],
                  zip(range(len(res.times)), res.times, res.rms_series(True),
                      res.rms_series(False)))
    doc = {"tool_version": __version__, "summary": summ, "late_trend": trend,
           "tolerances": {"pinv": "p * eps * sigma_max", "cl_bound_rtol": 0.1,
                          "smoothing_window_steps": raster_window(cfg.lasers, cfg.dt)}}
    pio.write_json(out / name, doc)
    return {"rms_ratio": summ["rms_ratio"], "seed": run.seed, **trend}


def cmd_report(inputs: Path, out: Path, name: str) -> dict:
    found = {}
    for cmd, name in PRIMARY.items():
        if cmd != "report" and (inputs / name).exists():
            found[cmd] = pio.read_json(inputs / name)
    if not found:
        raise ConfigError(f"no artifacts found in {inputs}")
    flags = []
    if "assemble" in found:
        a = found["assemble"]
        flags += [("hurwitz", a["hurwitz"], "max Re(lambda) < 0"),
                  ("real_spectrum", a["real_spectrum"], "|Im|/max|lambda| < 1e-8")]
    if "analyze-structural" in found:
        s = found["analyze-structural"]
        flags += [("SC", s["structural"]["SC"], "per-component surface rule"),
                  ("SO", s["structural"]["SO"], "per-component surface rule"),
                  ("perfect_matching", s["structural"]["perfect_matching"], "exact")]
        if "SSC" in s["ssc"]:
            flags.append(("SSC", s["ssc"]["SSC"], "exhaustive G0/G1 scan"))
    if "analyze-classical" in found:
        c = found["analyze-classical"]
        tol = c["tolerances"]["gramian_pd_rtol_of_trace"]
        flags += [("Wc_PD", c["gramians"]["controllability"]["pd"], f"min eig > {tol} * trace"),
                  ("Wo_PD", c["gramians"]["observability"]["pd"], f"min eig > {tol} * trace"),
                  ("kalman_full_rank", c["controllability"]["full_rank"],
                   c["tolerances"]["rank"])]
    if "energy" in found:
        for norm, sw in found["energy"]["sweeps"].items():
            flags += [(f"{norm}_strictly_increasing", sw["strictly_increasing"], "exact"),
                      (f"{norm}_non_increasing", sw["non_increasing"],
                       found["energy"]["tolerances"]["non_increasing"])]
    if "enkf" in found and "skipped" not in found["enkf"]["late_trend"]:
        e = found["enkf"]
        flags += [("enkf_ol_growing_late", e["late_trend"]["ol_growing"], "smoothed, final third"),
                  ("enkf_cl_bounded_late", e["late_trend"]["cl_bounded"],
                   f"late peak <= {1 + e['tolerances']['cl_bound_rtol']} x earlier peak")]
    doc = {"tool_version": __version__, "sources": sorted(found), "artifacts": found,
           "flags": {k: {"value": v, "tolerance": t} for k, v, t in flags}}
    pio.write_json(out / name, doc)
    pio.write_csv(out / "report_flags.csv", ["flag", "value", "tolerance"], flags)
    return {"sources": sorted(found), **{k: v for k, v, _ in flags}}


_HANDLERS = {"mesh": cmd_mesh, "assemble": cmd_assemble, "analyze-structural": cmd_structural,
             "analyze-classical": cmd_classical, "energy": cmd_energy, "enkf": cmd_enkf}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbfcontrol", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "report":
            sp.add_argument("--from", dest="inputs", default=None,
                            help="artifact directory (default: output directory)")
        else:
            sp.add_argument("--config", required=True, help="run config JSON")
        sp.add_argument("--out", default=None,
                        help=f"output directory or primary artifact path (default ${pio.OUT_ENV})")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve_out(arg: str | None, command: str) -> tuple[Path, str]:
    """Output directory and primary artifact name; a ``.json`` path names the file."""
    if arg is None:
        return pio.default_out_dir(), PRIMARY[command]
    path = Path(arg)
    if path.suffix == ".json":
        return path.parent, path.name
    return path, PRIMARY[command]


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        out, name = _resolve_out(args.out, args.command)
        if args.command == "report":
            summary = cmd_report(Path(args.inputs) if args.inputs else out, out, name)
        else:
            run = Run(pio.load_config(args.config), args.seed)
            summary = _HANDLERS[args.command](run, out, name)
        print(pio.one_line({"status": "ok", "command": args.command, "out": str(out), **summary}))
        return 0
    except ConfigError as exc:
        code, err = 2, exc
    except (KeyError, TypeError) as exc:
        code, err = 2, exc
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        code, err = 3, exc
    print(pio.one_line({"status": "error", "command": args.command, "exit_code": code,
                        "error": f"{type(err).__name__}: {err}"}))
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
