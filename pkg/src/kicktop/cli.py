"""Command-line driver: ``kicktop {classical,spectral,husimi,decay,audit}``.

Every subcommand reads one ``key = value`` configuration file (optional),
applies command-line overrides and writes CSV/JSON into ``--out``. Outputs
carry no timestamps, so identical configurations give identical files.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import fcntl
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from kicktop.classical import (ChaoticMask, PhaseGrid, chaotic_fraction, classify_phase_space,
                               read_mask, write_mask)
from kicktop.floquet import (SPECTRUM_VERSION, FloquetSpectrum, floquet_spectrum,
                             normalized_mean_ratio, read_spectrum, sector_components,
                             shannon_entropies, write_spectrum)
from kicktop.husimi import (build_frame, eigenstate_records, grid_convergence_audit, husimi,
                            husimi_statistics,
                            joint_distribution, mixed_fraction, read_records, select_box,
                            sliding_window_exponents, fit_power_law, write_json, write_records)
from kicktop.spin import DEFAULT_TOL, SpinSystem, direct_scs_oracle, make_coherent_state

log = logging.getLogger("kicktop")

LARGE_J = 2**12
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    j_list: list = field(default_factory=lambda: [2**7, 2**8, 2**9, 2**10])
    alpha: float = 11 * math.pi / 19
    gamma_list: list = field(default_factory=lambda: [8.0])
    grid: tuple = (200, 400)
    n_kicks: int = 300
    threshold: float = 1e-8
    krylov_tol: float = DEFAULT_TOL
    windows: list = field(default_factory=lambda: [(-0.9, 0.5)])
    delta_m: float = 0.0
    cache_dir: str = ".kicktop-cache"
    seed: int = 0
    workers: int = 1
    basis: str = "jx"
    audit_grids: list = field(default_factory=lambda: [(150, 300), (250, 500)])
    box: tuple = ()

    def validate(self) -> "RunConfig":
        if not self.j_list or any(int(j) != j or j < 1 for j in self.j_list):
            raise ConfigError(f"every j must be a positive integer: {self.j_list}")
        for n_theta, n_phi in [self.grid, *self.audit_grids]:
            if n_theta <= 0 or n_phi <= 0 or n_theta % 2 or n_phi % 2:
                raise ConfigError(f"grid sizes must be even and positive: {n_theta}x{n_phi}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.n_kicks < 1 or self.workers < 1:
            raise ConfigError("n_kicks and workers must be positive")
        if not all(math.isfinite(g) for g in [self.alpha, *self.gamma_list]):
            raise ConfigError("alpha and gamma must be finite")
        for lo, hi in self.windows:
            if not lo < hi:
                raise ConfigError(f"window ({lo}, {hi}) needs M0 < M1")
        if self.basis not in ("jx", "parity"):
            raise ConfigError("basis must be 'jx' or 'parity'")
        if self.box and len(self.box) != 4:
            raise ConfigError("box needs four numbers: M0, M1, L0, L1")
        return self


_PI_RE = re.compile(r"^\s*([-+]?[\d.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([\d.eE+-]+))?\s*$")


def parse_real(text: str) -> float:
    """A float, or a multiple of pi such as ``11*pi/19``."""
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse number {text!r}")
    coef = m.group(1)
    num = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    return num * math.pi / (float(m.group(2)) if m.group(2) else 1.0)


def _parse_pairs(text: str, sep: str) -> list:
    out = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        a, _, b = item.partition(sep)
        if not b:
            raise ConfigError(f"expected a{sep}b, got {item!r}")
        out.append((a.strip(), b.strip()))
    return out


def _parse_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def _parse_grid(text: str) -> tuple:
    a, _, b = text.lower().partition("x")
    try:
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"grid must look like 200x400, got {text!r}") from None


_PARSERS = {
    "j_list": lambda v: [int(x) for x in _parse_list(v)],
    "alpha": parse_real,
    "gamma_list": lambda v: [parse_real(x) for x in _parse_list(v)],
    "grid": _parse_grid,
    "n_kicks": int,
    "threshold": float,
    "krylov_tol": float,
    "windows": lambda v: [(parse_real(a), parse_real(b)) for a, b in _parse_pairs(v, ":")],
    "delta_m": float,
    "cache_dir": str,
    "seed": int,
    "workers": int,
    "basis": str,
    "audit_grids": lambda v: [_parse_grid(x) for x in _parse_list(v)],
    "box": lambda v: tuple(parse_real(x) for x in _parse_list(v)),
}


def apply_settings(cfg: RunConfig, settings: dict) -> RunConfig:
    updates = {}
    for key, value in settings.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            updates[key] = _PARSERS[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return replace(cfg, **updates)


def read_config_file(path) -> dict:
    settings = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ConfigError(f"{path}:{n}: expected key = value")
            settings[key.strip()] = value.strip()
    return settings


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        cfg = apply_settings(cfg, read_config_file(path))
    if overrides:
        cfg = apply_settings(cfg, overrides)
    return cfg.validate()


def config_keys() -> list[str]:
    return [f.name for f in fields(RunConfig)]


# -- resources, caching, locking ---------------------------------------------

def resource_estimate(j: int) -> str:
    n = j + 1
    mem_gb = 6 * 16 * n * n / 1e9
    minutes = 12.0 * (j / 1024) ** 3 / 60
    return f"j={j}: dense sector eigensolves need ~{mem_gb:.1f} GB and ~{minutes:.0f} min per gamma"


@contextlib.contextmanager
def cache_lock(cache_dir: Path):
    cache_dir.mkdir(parents=True, exist_ok=True)
    with open(cache_dir / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise RuntimeError(f"another run holds the lock on {cache_dir}") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


@contextlib.contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    yield
    log.info("%s: %.2f s", name, time.perf_counter() - t0)


def _num(x: float) -> str:
    return f"{x:.12g}"


class Runner:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.cache = Path(cfg.cache_dir)
        self.grid = PhaseGrid(*cfg.grid)
        self.failed = []

    def system(self, j: int, gamma: float) -> SpinSystem:
        return SpinSystem(j, self.cfg.alpha, gamma)

    def _spectrum_path(self, sys: SpinSystem, parity: str) -> Path:
        name = f"j{sys.j}_a{_num(sys.alpha)}_g{_num(sys.gamma)}_{parity}_v{SPECTRUM_VERSION}.bin"
        return self.cache / "spectra" / name

    def spectra(self, sys: SpinSystem) -> tuple[FloquetSpectrum, FloquetSpectrum]:
        out = []
        for parity in ("odd", "even"):
            path = self._spectrum_path(sys, parity)
            spec = None
            if path.exists():
                try:
                    spec = read_spectrum(path, sys, parity)
                except ValueError as exc:
                    log.warning("discarding cache %s: %s", path, exc)
            if spec is None:
                with stage(f"eigensolve j={sys.j} gamma={_num(sys.gamma)} {parity}"):
                    spec = floquet_spectrum(sys, parity)
                path.parent.mkdir(parents=True, exist_ok=True)
                write_spectrum(path, spec)
            out.append(spec)
        return tuple(out)

    def mask(self, gamma: float) -> ChaoticMask:
        c = self.cfg
        name = (f"mask_a{_num(c.alpha)}_g{_num(gamma)}_{self.grid.n_theta}x{self.grid.n_phi}"
                f"_k{c.n_kicks}_t{c.threshold:g}.csv")
        path = self.cache / "masks" / name
        if path.exists():
            mask = read_mask(path)
            if mask.grid == self.grid:
                return mask
            log.warning("discarding mask %s: grid mismatch", path)
        with stage(f"classify gamma={_num(gamma)}"):
            mask = classify_phase_space(self.system(1, gamma), self.grid, c.n_kicks,
                                        c.threshold, workers=c.workers)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_mask(path, mask)
        return mask

    def records(self, j: int, gamma: float):
        c = self.cfg
        name = (f"records_j{j}_a{_num(c.alpha)}_g{_num(gamma)}_{self.grid.n_theta}x{self.grid.n_phi}"
                f"_k{c.n_kicks}_t{c.threshold:g}_{c.basis}.csv")
        path = self.cache / "records" / name
        if path.exists():
            return read_records(path)
        sys_ = self.system(j, gamma)
        mask = self.mask(gamma)
        spectra = self.spectra(sys_)
        with stage(f"husimi j={j} gamma={_num(gamma)}"):
            frame = build_frame(sys_, self.grid, c.krylov_tol)
            recs = eigenstate_records(sys_, spectra, frame, mask, c.basis)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_records(path, recs)
        return recs

    def cell(self, label: str, fn, *args):
        """Run one (j, gamma) cell; failures are logged and the run continues."""
        try:
            return fn(*args)
        except Exception as exc:  # noqa: BLE001 - every cell failure is reported
            log.error("%s failed: %s", label, exc)
            self.failed.append(label)
            return None


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    os.replace(tmp, path)


# -- subcommands --------------------------------------------------------------

def cmd_classical(r: Runner) -> None:
    rows = []
    masks_dir = r.out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    for gamma in r.cfg.gamma_list:
        mask = r.cell(f"classical gamma={_num(gamma)}", r.mask, gamma)
        if mask is None:
            continue
        write_mask(masks_dir / f"mask_gamma{_num(gamma)}.csv", mask)
        rows.append((gamma, chaotic_fraction(mask)))
    _write_csv(r.out / "mu_c.csv", ["gamma", "mu_c"], rows)


def _spectral_cell(r: Runner, j: int, gamma: float):
    sys_ = r.system(j, gamma)
    odd, even = r.spectra(sys_)
    row = {"j": j, "gamma": gamma, "N": sys_.N, "r_c": normalized_mean_ratio(odd, even)}
    for basis in ("jx", "parity"):
        H = np.concatenate([shannon_entropies(sector_components(s, basis)) for s in (odd, even)])
        dims = np.concatenate([np.full(s.dim, s.dim) for s in (odd, even)])
        row[f"H_{basis}"] = float(H.mean())
        row[f"L_{basis}"] = float(np.mean(np.exp(H) / dims))
    with stage(f"wehrl j={j} gamma={_num(gamma)}"):
        frame = build_frame(sys_, r.grid, r.cfg.krylov_tol)
        S = np.concatenate([husimi_statistics(frame, s.lifted())["S"] for s in (odd, even)])
    row["S"] = float(S.mean())
    row["elm"] = float(np.mean(np.exp(S) / sys_.N))
    return row


def cmd_spectral(r: Runner) -> None:
    cols = ["j", "gamma", "N", "r_c", "H_jx", "L_jx", "H_parity", "L_parity", "S", "elm"]
    rows = []
    for j in r.cfg.j_list:
        for gamma in r.cfg.gamma_list:
            row = r.cell(f"spectral j={j} gamma={_num(gamma)}", _spectral_cell, r, j, gamma)
            if row is not None:
                rows.append([row[c] for c in cols])
    _write_csv(r.out / "spectral.csv", cols, rows)


def _dump_box(r: Runner, j: int, gamma: float, recs) -> None:
    m0, m1, l0, l1 = r.cfg.box
    ids = select_box(recs, (m0, m1), (l0, l1))
    dump_dir = r.out / "fields" / f"j{j}_gamma{_num(gamma)}"
    dump_dir.mkdir(parents=True, exist_ok=True)
    write_json(dump_dir / "selection.json", {"box": r.cfg.box, "ids": [list(i) for i in ids]})
    if not ids:
        return
    sys_ = r.system(j, gamma)
    spectra = {s.sector.parity: s for s in r.spectra(sys_)}
    frame = build_frame(sys_, r.grid, r.cfg.krylov_tol)
    for parity, index in ids:
        field_ = husimi(spectra[parity].lifted()[:, index], frame)
        np.savetxt(dump_dir / f"Q_{parity}_{index}.csv", field_.values, delimiter=",", fmt="%.17g")


def cmd_husimi(r: Runner) -> None:
    for j in r.cfg.j_list:
        for gamma in r.cfg.gamma_list:
            label = f"husimi j={j} gamma={_num(gamma)}"
            recs = r.cell(label, r.records, j, gamma)
            if recs is None:
                continue
            stem = f"j{j}_gamma{_num(gamma)}"
            write_records(r.out / f"records_{stem}.csv", recs)
            write_json(r.out / f"joint_{stem}.json", joint_distribution(recs))
            if r.cfg.box:
                r.cell(label + " box dump", _dump_box, r, j, gamma, recs)


def cmd_decay(r: Runner) -> None:
    rows = []
    fits = {}
    for gamma in r.cfg.gamma_list:
        by_j = {}
        for j in r.cfg.j_list:
            recs = r.cell(f"decay j={j} gamma={_num(gamma)}", r.records, j, gamma)
            if recs is not None:
                by_j[j] = recs
        entry = {"windows": []}
        for lo, hi in r.cfg.windows:
            pts = [(j, mixed_fraction(by_j[j], lo, hi)) for j in sorted(by_j)]
            rows.extend((j, gamma, lo, hi, chi) for j, chi in pts)
            try:
                fit = fit_power_law(pts, (lo, hi))
            except ValueError as exc:
                log.warning("gamma=%s window (%s, %s): %s", _num(gamma), lo, hi, exc)
                fit = {"window": (lo, hi), "valid": False, "reason": str(exc)}
            entry["windows"].append(fit)
        if r.cfg.delta_m > 0 and by_j:
            entry["sliding"] = {"delta_m": r.cfg.delta_m,
                                "fits": sliding_window_exponents(by_j, r.cfg.delta_m)}
        fits[_num(gamma)] = entry
    _write_csv(r.out / "chi_M.csv", ["j", "gamma", "M0", "M1", "chi_M"], rows)
    write_json(r.out / "fits.json", fits)


def _oracle_audit(r: Runner, j: int) -> dict:
    rng = np.random.default_rng(r.cfg.seed)
    sys_ = SpinSystem(j)
    worst = 0.0
    with stage(f"oracle j={j}"):
        for _ in range(50):
            th, ph = rng.uniform(0, np.pi), rng.uniform(-np.pi, np.pi)
            a = make_coherent_state(sys_, th, ph, r.cfg.krylov_tol).amplitudes
            b = direct_scs_oracle(sys_, th, ph).amplitudes
            worst = max(worst, float(np.abs(a - b).max()))
    return {"j": j, "max_deviation": worst, "passed": worst <= 1e-9}


def cmd_audit(r: Runner) -> None:
    report = {"oracle": [], "grid": []}
    for j in r.cfg.j_list:
        if j <= 1024:
            res = r.cell(f"oracle j={j}", _oracle_audit, r, j)
            if res is not None:
                report["oracle"].append(res)
                if not res["passed"]:
                    r.failed.append(f"oracle j={j}")
        rows = r.cell(f"grid audit j={j}", grid_convergence_audit, r.system(j, 0.0),
                      r.cfg.gamma_list, r.cfg.audit_grids, r.spectra)
        if rows is not None:
            report["grid"].extend({"j": j, **row} for row in rows)
    write_json(r.out / "audit.json", report)


COMMANDS = {
    "classical": cmd_classical,
    "spectral": cmd_spectral,
    "husimi": cmd_husimi,
    "decay": cmd_decay,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kicktop", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("-c", "--config", help="key = value configuration file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                   help=f"override a config key; keys: {', '.join(config_keys())}")
    p.add_argument("--j", dest="j_list", help="comma-separated j values")
    p.add_argument("--gamma", dest="gamma_list", help="comma-separated kick strengths")
    p.add_argument("--grid", help="phase grid, e.g. 200x400")
    p.add_argument("--workers", help="worker processes for the classical scan")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("-o", "--out", default="kicktop-out", help="output directory")
    p.add_argument("--allow-large", action="store_true", help=f"permit j >= {LARGE_J}")
    p.add_argument("--allow-coarse-grid", action="store_true",
                   help="permit j larger than a quarter of the grid size")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {}
    for key in ("j_list", "gamma_list", "grid", "workers", "cache_dir"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            log.error("--set expects KEY=VALUE, got %r", item)
            return EXIT_USAGE
        overrides[key.strip()] = value.strip()
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        log.error("configuration: %s", exc)
        return EXIT_USAGE

    big = [j for j in cfg.j_list if j >= LARGE_J]
    if big and not args.allow_large:
        for j in big:
            log.error(resource_estimate(j))
        log.error("rerun with --allow-large to proceed")
        return EXIT_USAGE
    n_points = cfg.grid[0] * cfg.grid[1]
    coarse = [j for j in cfg.j_list if j > n_points / 4]
    if coarse and args.command != "classical" and not args.allow_coarse_grid:
        log.error("j=%s exceeds N_p/4=%d for a %dx%d grid; use a finer grid or --allow-coarse-grid",
                  coarse, n_points // 4, *cfg.grid)
        return EXIT_USAGE

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(cfg, out)
    try:
        with cache_lock(Path(cfg.cache_dir)), stage(args.command):
            COMMANDS[args.command](runner)
    except RuntimeError as exc:
        log.error("%s", exc)
        return EXIT_FAILED
    except OSError as exc:
        log.error("I/O error on %s: %s", exc.filename, exc.strerror)
        return EXIT_FAILED
    if runner.failed:
        log.error("%d cell(s) failed: %s", len(runner.failed), "; ".join(runner.failed))
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
