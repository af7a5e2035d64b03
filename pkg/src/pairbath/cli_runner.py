"""YAML-driven command line front end.

Subcommands
-----------
run       single trajectory -> trajectory.csv, pairs.csv, manifest.yaml
scan      omega-tau grid -> scan.csv, manifest.yaml
verify    pulse-sequence verification curves -> verify.csv, manifest.yaml
sense     spectroscopy + coherence comparison -> spectroscopy.csv,
          coherence.csv, manifest.yaml
selftest  acceptance criteria, one PASS/FAIL line each

Exit codes: 0 success, 2 configuration error, 3 trajectory extinction,
4 branch-capacity overflow.

Tables are comma separated with a single header line, rows in a fixed
deterministic order, and floats printed with 15 significant digits, so a
rerun with the same config and seed is byte-identical. The manifest embeds
the fully normalized config; feeding the manifest back through --config
reproduces the run.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import concurrence, detect_pairing
from .dynamics_dense import (
    ProtocolConfig,
    all_pair_rdms,
    maximally_mixed,
    run_protocol,
)
from .dynamics_factored import (
    mixed_state_monte_carlo,
    reduced_density_matrix,
    run_factored,
)
from .errors import CapacityError, ConfigError, ExtinctionError
from .protocols import (
    FLIP_THRESHOLD,
    SpeciesBath,
    SpeciesGroup,
    coherence_trace,
    find_local_maxima,
    resolves_side_features,
    spectroscopy_scan,
    verification_scan,
)
from .spin_core import (
    CouplingSet,
    chain_geometry,
    dimer_chain_geometry,
    dipolar_couplings,
    effective_coupling,
    optimal_params,
    plane_geometry,
)

_TOP_KEYS = {"seed", "geometry", "coupling", "protocol", "engine",
             "scan", "verify", "sense"}
_GEOMETRY_KINDS = ("chain", "dimer_chain", "plane", "explicit")
_ENGINES = ("dense", "factored", "montecarlo")
_PREPARATIONS = ("mixed", "polarized", "paired", "unpolarized")
_VERIFY_PREPARATIONS = _PREPARATIONS + ("singlet",)


# ---------------------------------------------------------------------------
# output formatting
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".15g")


def _write_table(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(out_dir: Path, command: str, cfg: dict, resolved: dict,
                    outputs: dict) -> None:
    doc = {
        "tool": f"pairbath {__version__}",
        "command": command,
        "config": cfg,
        "resolved": resolved,
        "outputs": outputs,
    }
    (out_dir / "manifest.yaml").write_text(
        yaml.safe_dump(doc, sort_keys=False, default_flow_style=False))


# ---------------------------------------------------------------------------
# config loading and validation
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML parse error{loc}: {problem}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"top level must be a mapping, got {type(raw).__name__}")
    # a manifest from an earlier run round-trips as a config
    if "tool" in raw and isinstance(raw.get("config"), dict):
        raw = raw["config"]
    return raw


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


class _Checker:
    """Collects every problem before failing, each tagged with its key path."""

    def __init__(self):
        self.errors: list[str] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def section(self, raw: dict, name: str) -> dict | None:
        sec = raw.get(name)
        if sec is None:
            return None
        if not isinstance(sec, dict):
            self.err(name, f"must be a mapping, got {type(sec).__name__}")
            return None
        return sec

    def num(self, sec: dict, path: str, key: str, default=None,
            minimum=None, strict_min=None):
        v = sec.get(key, default)
        if v is None:
            self.err(f"{path}.{key}", "is required")
            return default
        if not _is_num(v):
            self.err(f"{path}.{key}", f"must be a number, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.err(f"{path}.{key}", f"must be >= {minimum}, got {v}")
        if strict_min is not None and v <= strict_min:
            self.err(f"{path}.{key}", f"must be > {strict_min}, got {v}")
        return float(v)

    def integer(self, sec: dict, path: str, key: str, default=None, minimum=None):
        v = sec.get(key, default)
        if v is None:
            self.err(f"{path}.{key}", "is required")
            return default
        if not _is_int(v):
            self.err(f"{path}.{key}", f"must be an integer, got {v!r}")
            return default
        if minimum is not None and v < minimum:
            self.err(f"{path}.{key}", f"must be >= {minimum}, got {v}")
        return int(v)

    def choice(self, sec: dict, path: str, key: str, options, default=None):
        v = sec.get(key, default)
        if v not in options:
            self.err(f"{path}.{key}", f"must be one of {list(options)}, got {v!r}")
            return default
        return v

    def grid(self, sec: dict, path: str, key: str, strict_min=None) -> dict | None:
        v = sec.get(key)
        if not isinstance(v, dict):
            self.err(f"{path}.{key}",
                     "must be a mapping with start, stop, points")
            return None
        start = self.num(v, f"{path}.{key}", "start", strict_min=strict_min)
        stop = self.num(v, f"{path}.{key}", "stop", strict_min=strict_min)
        points = self.integer(v, f"{path}.{key}", "points", minimum=1)
        if start is not None and stop is not None and stop < start:
            self.err(f"{path}.{key}.stop", f"must be >= start, got {stop} < {start}")
            return None
        if None in (start, stop, points):
            return None
        return {"start": start, "stop": stop, "points": points}


def _check_geometry(ck: _Checker, raw: dict) -> dict | None:
    geom = ck.section(raw, "geometry")
    if geom is None:
        if "geometry" not in raw:
            ck.err("geometry", "is required for this command")
        return None
    kind = ck.choice(geom, "geometry", "kind", _GEOMETRY_KINDS)
    if kind is None:
        return None
    out = {"kind": kind}
    if kind == "chain":
        out["n"] = ck.integer(geom, "geometry", "n", minimum=1)
        out["spacing"] = ck.num(geom, "geometry", "spacing", strict_min=0.0)
        out["z0"] = ck.num(geom, "geometry", "z0")
        out["x0"] = ck.num(geom, "geometry", "x0", default=0.0)
    elif kind == "dimer_chain":
        out["n_pairs"] = ck.integer(geom, "geometry", "n_pairs", minimum=1)
        out["pair_spacing"] = ck.num(geom, "geometry", "pair_spacing", strict_min=0.0)
        out["dimer_gap"] = ck.num(geom, "geometry", "dimer_gap", strict_min=0.0)
        out["z0"] = ck.num(geom, "geometry", "z0")
        out["x0"] = ck.num(geom, "geometry", "x0", default=0.0)
    elif kind == "plane":
        out["n"] = ck.integer(geom, "geometry", "n", minimum=1)
        box = geom.get("box")
        if (not isinstance(box, (list, tuple)) or len(box) != 4
                or not all(_is_num(b) for b in box)):
            ck.err("geometry.box", "must be [xlo, xhi, ylo, yhi]")
        else:
            if not (box[1] > box[0] and box[3] > box[2]):
                ck.err("geometry.box", f"describes an empty rectangle: {list(box)}")
            out["box"] = [float(b) for b in box]
        out["z0"] = ck.num(geom, "geometry", "z0")
        out["seed"] = ck.integer(geom, "geometry", "seed", minimum=0)
    else:  # explicit
        g = geom.get("g_vectors")
        ok = (isinstance(g, list) and g
              and all(isinstance(row, (list, tuple)) and len(row) == 3
                      and all(_is_num(x) for x in row) for row in g))
        if not ok:
            ck.err("geometry.g_vectors", "must be a nonempty list of [gx, gy, gz] rows")
        else:
            out["g_vectors"] = [[float(x) for x in row] for row in g]
    return out


def _geometry_spin_count(geom: dict | None) -> int | None:
    if geom is None:
        return None
    kind = geom.get("kind")
    if kind == "chain" or kind == "plane":
        return geom.get("n")
    if kind == "dimer_chain":
        np_ = geom.get("n_pairs")
        return None if np_ is None else 2 * np_
    if kind == "explicit" and "g_vectors" in geom:
        return len(geom["g_vectors"])
    return None


def _check_amplitude(ck: _Checker, sec: dict, path: str, key: str) -> list[float]:
    v = sec.get(key)
    if v is None:
        s = 1.0 / np.sqrt(2.0)
        return [float(s), 0.0]
    if _is_num(v):
        return [float(v), 0.0]
    if (isinstance(v, (list, tuple)) and len(v) == 2
            and all(_is_num(x) for x in v)):
        return [float(v[0]), float(v[1])]
    ck.err(f"{path}.{key}", f"must be a number or [re, im], got {v!r}")
    return [1.0 / np.sqrt(2.0), 0.0]


def _check_protocol(ck: _Checker, raw: dict) -> dict:
    prot = ck.section(raw, "protocol") or {}
    out = {}
    for key in ("omega", "tau"):
        v = prot.get(key, "auto")
        if v == "auto":
            out[key] = "auto"
        elif _is_num(v):
            if key == "tau" and v <= 0:
                ck.err(f"protocol.{key}", f"must be > 0, got {v}")
            elif key == "omega" and v < 0:
                ck.err(f"protocol.{key}", f"must be >= 0, got {v}")
            out[key] = float(v)
        else:
            ck.err(f"protocol.{key}", f"must be a number or 'auto', got {v!r}")
            out[key] = "auto"
    out["units"] = ck.choice(prot, "protocol", "units",
                             ("absolute", "g_eff"), default="absolute")
    out["measurements"] = ck.integer(prot, "protocol", "measurements",
                                     default=100, minimum=1)
    out["alpha"] = _check_amplitude(ck, prot, "protocol", "alpha")
    out["beta"] = _check_amplitude(ck, prot, "protocol", "beta")
    norm = (out["alpha"][0] ** 2 + out["alpha"][1] ** 2
            + out["beta"][0] ** 2 + out["beta"][1] ** 2)
    if abs(norm - 1.0) > 1e-12:
        ck.err("protocol.alpha", f"|alpha|^2 + |beta|^2 must be 1, got {norm!r}")
    out["dephasing_rate"] = ck.num(prot, "protocol", "dephasing_rate",
                                   default=0.0, minimum=0.0)
    rt = prot.get("readout_time")
    if rt is None:
        out["readout_time"] = None
    elif _is_num(rt) and rt > 0:
        out["readout_time"] = float(rt)
    else:
        ck.err("protocol.readout_time", f"must be a positive number or null, got {rt!r}")
        out["readout_time"] = None
    return out


def _check_engine(ck: _Checker, raw: dict) -> dict:
    eng = ck.section(raw, "engine") or {}
    out = {
        "name": ck.choice(eng, "engine", "name", _ENGINES, default="dense"),
        "dense_limit": ck.integer(eng, "engine", "dense_limit", default=12, minimum=1),
        "branch_cap": ck.integer(eng, "engine", "branch_cap", default=2 ** 20, minimum=2),
        "samples": ck.integer(eng, "engine", "samples", default=200, minimum=1),
        "sample_basis": ck.choice(eng, "engine", "sample_basis",
                                  ("haar", "z"), default="haar"),
        "initial_state": ck.choice(eng, "engine", "initial_state",
                                   ("polarized", "haar"), default="polarized"),
        "purity_pairs": ck.integer(eng, "engine", "purity_pairs", default=256, minimum=1),
    }
    return out


def _check_verify(ck: _Checker, raw: dict) -> dict | None:
    v = ck.section(raw, "verify")
    if v is None:
        if "verify" not in raw:
            ck.err("verify", "is required for this command")
        return None
    out = {
        "g1": ck.num(v, "verify", "g1"),
        "g2": ck.num(v, "verify", "g2"),
        "omega": ck.num(v, "verify", "omega", strict_min=0.0),
        "m_max": ck.integer(v, "verify", "m_max", default=50, minimum=1),
    }
    tv = v.get("tau_v")
    if tv is None:
        out["tau_v"] = None
    elif _is_num(tv) and tv > 0:
        out["tau_v"] = float(tv)
    else:
        ck.err("verify.tau_v", f"must be a positive number or null, got {tv!r}")
        out["tau_v"] = None
    th = v.get("threshold")
    if th is None:
        out["threshold"] = float(FLIP_THRESHOLD)
    elif _is_num(th) and 0.0 < th < 1.0:
        out["threshold"] = float(th)
    else:
        ck.err("verify.threshold", f"must lie in (0, 1), got {th!r}")
        out["threshold"] = float(FLIP_THRESHOLD)
    preps = v.get("preparations", ["unpolarized", "singlet"])
    if (not isinstance(preps, list) or not preps
            or any(p not in _VERIFY_PREPARATIONS for p in preps)):
        ck.err("verify.preparations",
               f"must be a nonempty list drawn from {list(_VERIFY_PREPARATIONS)}")
        preps = ["unpolarized", "singlet"]
    out["preparations"] = list(preps)
    return out


def _check_sense(ck: _Checker, raw: dict) -> dict | None:
    s = ck.section(raw, "sense")
    if s is None:
        if "sense" not in raw:
            ck.err("sense", "is required for this command")
        return None
    out = {"m": ck.integer(s, "sense", "m", default=16, minimum=1)}
    species = s.get("species")
    if not isinstance(species, list) or not species:
        ck.err("sense.species", "must be a nonempty list of species groups")
        return None
    groups = []
    for idx, sp in enumerate(species):
        path = f"sense.species[{idx}]"
        if not isinstance(sp, dict):
            ck.err(path, "must be a mapping")
            continue
        omega = ck.num(sp, path, "omega")
        prep = ck.choice(sp, path, "preparation", _PREPARATIONS, default="mixed")
        g = sp.get("g_vectors")
        ok = (isinstance(g, list) and g
              and all(isinstance(row, (list, tuple)) and len(row) == 3
                      and all(_is_num(x) for x in row) for row in g))
        if not ok:
            ck.err(f"{path}.g_vectors", "must be a nonempty list of [gx, gy, gz] rows")
            continue
        if prep == "paired" and len(g) % 2 != 0:
            ck.err(f"{path}.g_vectors", "paired preparation needs an even spin count")
        groups.append({"omega": omega,
                       "g_vectors": [[float(x) for x in row] for row in g],
                       "preparation": prep})
    out["species"] = groups
    out["tau_grid"] = ck.grid(s, "sense", "tau_grid", strict_min=0.0)
    if "time_grid" in s:
        out["time_grid"] = ck.grid(s, "sense", "time_grid")
    else:
        out["time_grid"] = None
    for key in ("omega", "epsilon"):
        v = s.get(key)
        if v is None:
            out[key] = None
        elif _is_num(v):
            out[key] = float(v)
        else:
            ck.err(f"sense.{key}", f"must be a number, got {v!r}")
            out[key] = None
    return out


def validate_config(raw: dict, command: str = "run") -> dict:
    """Normalize and validate a raw config mapping for the given command.

    Every problem is collected and reported at once, tagged with the dotted
    path of the offending key. Returns the normalized config with all
    defaults filled in; raises ConfigError if anything is wrong.
    """
    ck = _Checker()
    for key in raw:
        if key not in _TOP_KEYS:
            ck.err(key, "unknown section")

    norm: dict = {}
    seed = raw.get("seed", 0)
    if not _is_int(seed) or seed < 0:
        ck.err("seed", f"must be a nonnegative integer, got {seed!r}")
        seed = 0
    norm["seed"] = seed

    needs_bath = command in ("run", "scan")
    geom = _check_geometry(ck, raw) if (needs_bath or "geometry" in raw) else None
    if geom is not None:
        norm["geometry"] = geom
    coup = ck.section(raw, "coupling") or {}
    norm["coupling"] = {"prefactor": ck.num(coup, "coupling", "prefactor",
                                            default=1.0, strict_min=0.0)}
    norm["protocol"] = _check_protocol(ck, raw)
    norm["engine"] = _check_engine(ck, raw)

    if needs_bath:
        n = _geometry_spin_count(geom)
        if (n is not None and norm["engine"]["name"] == "dense"
                and norm["engine"]["dense_limit"] is not None
                and n > norm["engine"]["dense_limit"]):
            ck.err("engine.name",
                   f"dense engine is limited to {norm['engine']['dense_limit']} "
                   f"spins but the geometry has {n}; raise engine.dense_limit "
                   f"or switch to factored or montecarlo")

    if command == "scan" or "scan" in raw:
        sc = ck.section(raw, "scan")
        if sc is None:
            if command == "scan":
                ck.err("scan", "is required for this command")
        else:
            norm["scan"] = {
                "omega": ck.grid(sc, "scan", "omega", strict_min=0.0),
                "tau": ck.grid(sc, "scan", "tau", strict_min=0.0),
                "measurements": ck.integer(sc, "scan", "measurements",
                                           default=40, minimum=1),
            }
    if command == "verify" or "verify" in raw:
        v = _check_verify(ck, raw)
        if v is not None:
            norm["verify"] = v
    if command == "sense" or "sense" in raw:
        s = _check_sense(ck, raw)
        if s is not None:
            norm["sense"] = s

    if ck.errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(ck.errors))
    return norm


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

def _bath_vectors(cfg: dict) -> np.ndarray:
    geom = cfg["geometry"]
    kind = geom["kind"]
    if kind == "explicit":
        return np.asarray(geom["g_vectors"], dtype=float)
    try:
        if kind == "chain":
            g = chain_geometry(geom["n"], geom["spacing"], geom["z0"], geom["x0"])
        elif kind == "dimer_chain":
            g = dimer_chain_geometry(geom["n_pairs"], geom["pair_spacing"],
                                     geom["dimer_gap"], geom["z0"], geom["x0"])
        else:
            g = plane_geometry(geom["n"], tuple(geom["box"]), geom["z0"],
                               geom["seed"])
        return dipolar_couplings(g, cfg["coupling"]["prefactor"]).g_vectors
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc


def _resolve_params(cfg: dict, g: np.ndarray) -> tuple[float, float, float]:
    """(omega, tau, g_eff) in absolute units."""
    base = CouplingSet(g, 0.0)
    g_eff = effective_coupling(base)
    prot = cfg["protocol"]
    om, ta = prot["omega"], prot["tau"]
    auto_om = auto_ta = None
    if om == "auto" or ta == "auto":
        try:
            auto_om, auto_ta = optimal_params(base)
        except ValueError as exc:
            raise ConfigError(f"protocol.omega: {exc}") from exc
    if prot["units"] == "g_eff":
        if g_eff == 0.0:
            raise ConfigError("protocol.units: g_eff units are undefined for "
                              "all-zero couplings")
        if om != "auto":
            om = om * g_eff
        if ta != "auto":
            ta = ta / g_eff
    omega = auto_om if om == "auto" else float(om)
    tau = auto_ta if ta == "auto" else float(ta)
    return omega, tau, g_eff


def _protocol_config(cfg: dict, omega: float, tau: float) -> ProtocolConfig:
    prot = cfg["protocol"]
    return ProtocolConfig(
        omega=omega, tau=tau, measurements=prot["measurements"],
        alpha=complex(*prot["alpha"]), beta=complex(*prot["beta"]),
        dephasing_rate=prot["dephasing_rate"],
        readout_time=prot["readout_time"])


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _conditional(cum: np.ndarray) -> np.ndarray:
    """Per-step ratios of a cumulative probability series; 0 after extinction."""
    prev = np.concatenate([[1.0], cum[:-1]])
    return np.divide(cum, prev, out=np.zeros_like(cum), where=prev > 0)


def _pairs_rows(rdms: dict, n: int):
    asg = detect_pairing(rdms, n)
    rows = []
    for m in asg.matches:
        rho = rdms[(m.i, m.j)]
        rho = rho / np.trace(rho).real
        rows.append((m.i, m.j, m.fidelity, m.phase, concurrence(rho)))
    return rows, asg


def cmd_run(cfg: dict, out_dir: Path) -> int:
    g = _bath_vectors(cfg)
    omega, tau, g_eff = _resolve_params(cfg, g)
    c = CouplingSet(g, omega)
    n = c.n_spins
    pcfg = _protocol_config(cfg, omega, tau)
    eng = cfg["engine"]
    purity_estimate = None

    if eng["name"] == "dense":
        traj = run_protocol(maximally_mixed(n), pcfg, c)
        steps = traj.steps
        traj_rows = [(s + 1, traj.conditional_p[s], traj.cumulative_p[s],
                      traj.purity[s]) for s in range(steps)]
        rdms = all_pair_rdms(traj.final_rho, n)
        status = traj.status
        final_purity = float(traj.purity[-1]) if steps else float("nan")
        final_cum = float(traj.cumulative_p[-1]) if steps else float("nan")
    elif eng["name"] == "factored":
        if eng["initial_state"] == "haar":
            from .dynamics_factored import _haar_product
            states = _haar_product(np.random.default_rng(cfg["seed"]), n)
        else:
            states = np.tile(np.array([1.0, 0.0], dtype=complex), (n, 1))
        ens, probs = run_factored(states, pcfg, c, branch_cap=eng["branch_cap"])
        cond = _conditional(probs)
        # conditioned pure states stay pure
        traj_rows = [(s + 1, cond[s], probs[s], 1.0) for s in range(len(probs))]
        rdms = {(i, j): reduced_density_matrix(ens, i, j)
                for i in range(n) for j in range(i + 1, n)}
        status = "extinct" if probs[-1] < pcfg.extinction_floor else "completed"
        final_purity = 1.0
        final_cum = float(probs[-1])
    else:
        pair_list = [(i, j) for i in range(n) for j in range(i + 1, n)]
        res = mixed_state_monte_carlo(
            c, pcfg, samples=eng["samples"], seed=cfg["seed"],
            pair_list=pair_list, basis=eng["sample_basis"],
            branch_cap=eng["branch_cap"], purity_pair_budget=eng["purity_pairs"])
        cum = res.success_probability
        cond = _conditional(cum)
        traj_rows = [(s + 1, cond[s], cum[s], float("nan"))
                     for s in range(len(cum))]
        rdms = res.pair_rdms
        status = "extinct" if cum[-1] < pcfg.extinction_floor else "completed"
        final_purity = float(res.purity_estimate)
        final_cum = float(cum[-1])
        purity_estimate = float(res.purity_estimate)

    _write_table(out_dir / "trajectory.csv",
                 ["step", "conditional_p", "cumulative_p", "purity"], traj_rows)
    pair_rows, asg = _pairs_rows(rdms, n)
    _write_table(out_dir / "pairs.csv",
                 ["spin_i", "spin_j", "fidelity", "phase", "concurrence"],
                 pair_rows)

    resolved = {
        "n_spins": int(n),
        "g_eff": float(g_eff),
        "omega": float(omega),
        "tau": float(tau),
        "omega_over_g_eff": float(omega / g_eff) if g_eff else None,
        "tau_times_g_eff": float(tau * g_eff) if g_eff else None,
        "status": status,
        "steps_completed": len(traj_rows),
        "final_purity": final_purity,
        "final_cumulative_p": final_cum,
        "n_pairs_high_fidelity": sum(1 for r in pair_rows if r[2] > 0.9),
        "all_paired": bool(asg.all_paired),
    }
    if purity_estimate is not None:
        resolved["purity_estimate"] = purity_estimate
    _write_manifest(out_dir, "run", cfg, resolved,
                    {"trajectory": "trajectory.csv", "pairs": "pairs.csv"})
    return 3 if status == "extinct" else 0


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------

def _scan_point(args):
    g_rows, omega, tau, measurements = args
    c = CouplingSet(np.asarray(g_rows, dtype=float), omega)
    cfg = ProtocolConfig(omega=omega, tau=tau, measurements=measurements)
    traj = run_protocol(maximally_mixed(c.n_spins), cfg, c)
    rdms = all_pair_rdms(traj.final_rho, c.n_spins)
    asg = detect_pairing(rdms, c.n_spins)
    n_pairs = sum(1 for m in asg.matches if m.fidelity > 0.9)
    cum = float(traj.cumulative_p[-1]) if traj.steps else float("nan")
    pur = float(traj.purity[-1]) if traj.steps else float("nan")
    return pur, cum, n_pairs, traj.status


def _linspace(grid: dict) -> np.ndarray:
    return np.linspace(grid["start"], grid["stop"], grid["points"])


def cmd_scan(cfg: dict, out_dir: Path, threads: int = 1) -> int:
    g = _bath_vectors(cfg)
    base = CouplingSet(g, 0.0)
    g_eff = effective_coupling(base)
    if g_eff == 0.0:
        raise ConfigError("geometry: scan grids are in g_eff units and the "
                          "couplings are all zero")
    sc = cfg["scan"]
    om_rel = _linspace(sc["omega"])
    ta_rel = _linspace(sc["tau"])
    g_rows = tuple(tuple(float(x) for x in row) for row in g)
    tasks = [(g_rows, float(o * g_eff), float(t / g_eff), sc["measurements"])
             for o in om_rel for t in ta_rel]

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            # map preserves submission order, so assembly is grid-ordered
            # regardless of worker scheduling
            results = list(ex.map(_scan_point, tasks, chunksize=4))
    else:
        results = [_scan_point(t) for t in tasks]

    rows = [(task[1], task[2], r[0], r[1], r[2])
            for task, r in zip(tasks, results)]
    _write_table(out_dir / "scan.csv",
                 ["omega", "tau", "purity", "cumulative_p", "n_pairs"], rows)

    resolved = {
        "n_spins": int(base.n_spins),
        "g_eff": float(g_eff),
        "omega_grid_relative": [float(x) for x in om_rel],
        "tau_grid_relative": [float(x) for x in ta_rel],
        "omega_grid_absolute": [float(x * g_eff) for x in om_rel],
        "tau_grid_absolute": [float(x / g_eff) for x in ta_rel],
        "measurements": sc["measurements"],
        "points": len(tasks),
        "extinct_points": sum(1 for r in results if r[3] == "extinct"),
    }
    _write_manifest(out_dir, "scan", cfg, resolved, {"scan": "scan.csv"})
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(cfg: dict, out_dir: Path) -> int:
    v = cfg["verify"]
    results = {}
    for prep in v["preparations"]:
        results[prep] = verification_scan(
            v["g1"], v["g2"], v["omega"], tau_v=v["tau_v"], m_max=v["m_max"],
            preparation=prep, threshold=v["threshold"])
    first = next(iter(results.values()))
    header = ["m"] + [f"flip_{p}" for p in v["preparations"]]
    rows = [(m + 1, *(results[p].curve[m] for p in v["preparations"]))
            for m in range(v["m_max"])]
    _write_table(out_dir / "verify.csv", header, rows)

    resolved = {
        "tau_v": float(first.tau_v),
        "threshold": float(first.threshold),
        "preparations": {
            p: {"m_star": r.m_star, "status": r.status,
                "max_probability": float(r.max_probability)}
            for p, r in results.items()
        },
    }
    _write_manifest(out_dir, "verify", cfg, resolved, {"verify": "verify.csv"})
    return 0


# ---------------------------------------------------------------------------
# sense
# ---------------------------------------------------------------------------

def _species_bath(spec: list, retag: str | None = None) -> SpeciesBath:
    return SpeciesBath(tuple(
        SpeciesGroup(sp["omega"], np.asarray(sp["g_vectors"], dtype=float),
                     retag or sp["preparation"])
        for sp in spec))


def cmd_sense(cfg: dict, out_dir: Path) -> int:
    s = cfg["sense"]
    bath = _species_bath(s["species"])
    mixed = _species_bath(s["species"], retag="mixed")
    tau_grid = _linspace(s["tau_grid"])
    scan = spectroscopy_scan(bath, tau_grid, m=s["m"])
    scan_mixed = spectroscopy_scan(mixed, tau_grid, m=s["m"])
    _write_table(out_dir / "spectroscopy.csv", ["tau", "signal", "signal_mixed"],
                 zip(tau_grid, scan.signal, scan_mixed.signal))
    outputs = {"spectroscopy": "spectroscopy.csv"}

    resolved: dict = {"m": s["m"]}
    peaks = find_local_maxima(scan.tau_grid, scan.signal)
    resolved["peaks"] = [[float(t), float(h)] for t, h in peaks]
    peaks_mixed = find_local_maxima(scan_mixed.tau_grid, scan_mixed.signal)
    resolved["peaks_mixed"] = [[float(t), float(h)] for t, h in peaks_mixed]
    if s["omega"] is not None and s["epsilon"] is not None:
        resolved["resolves_side_features"] = bool(
            resolves_side_features(scan, s["omega"], s["epsilon"]))
        resolved["resolves_side_features_mixed"] = bool(
            resolves_side_features(scan_mixed, s["omega"], s["epsilon"]))

    if s["time_grid"] is not None:
        t_grid = _linspace(s["time_grid"])
        ell = coherence_trace(None, bath, t_grid)
        ell_mixed = coherence_trace("mixed", bath, t_grid)
        _write_table(out_dir / "coherence.csv",
                     ["t", "coherence", "coherence_mixed"],
                     zip(t_grid, ell, ell_mixed))
        outputs["coherence"] = "coherence.csv"
        resolved["min_coherence_gap"] = float(np.min(ell - ell_mixed))

    _write_manifest(out_dir, "sense", cfg, resolved, outputs)
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------

def cmd_selftest(indices=None) -> int:
    from .acceptance import run_criteria
    results = run_criteria(indices)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"criterion {r.index} [{mark}] {r.name}: {r.detail} "
              f"({r.seconds:.1f}s)")
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML scenario file")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--engine", choices=_ENGINES, default=None,
                   help="override engine.name")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for scan grids")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pairbath",
        description="measurement-conditioned spin-bath purification")
    parser.add_argument("--version", action="version",
                        version=f"pairbath {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "single trajectory"),
                        ("scan", "omega-tau grid"),
                        ("verify", "pulse-sequence verification curves"),
                        ("sense", "spectroscopy and coherence comparison")):
        _add_common(sub.add_parser(name, help=help_))
    st = sub.add_parser("selftest", help="acceptance criteria")
    st.add_argument("--criteria", default=None,
                    help="comma-separated criterion numbers (default: all)")

    args = parser.parse_args(argv)
    try:
        if args.command == "selftest":
            indices = None
            if args.criteria:
                indices = [int(x) for x in args.criteria.split(",")]
            return cmd_selftest(indices)

        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.engine is not None:
            raw.setdefault("engine", {})["name"] = args.engine
        cfg = validate_config(raw, args.command)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return cmd_run(cfg, out_dir)
        if args.command == "scan":
            return cmd_scan(cfg, out_dir, threads=max(1, args.threads))
        if args.command == "verify":
            return cmd_verify(cfg, out_dir)
        return cmd_sense(cfg, out_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ExtinctionError as exc:
        print(f"extinction: {exc}", file=sys.stderr)
        return 3
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
