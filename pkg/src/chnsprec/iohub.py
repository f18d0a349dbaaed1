"""File formats: Matrix Market (coordinate, real, general), legacy ASCII VTK,
CSV statistics and the key=value run configuration."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ParseError

MM_HEADER = "%%MatrixMarket matrix coordinate real general"
STATS_HEADER = ("step", "time", "newton_iters", "mean_fgmres", "energy", "dissipation",
                "cfl_max")


# Matrix Market ----------------------------------------------------------------

def write_matrix_market(matrix, path) -> None:
    """Write 1-indexed coordinate entries with 17 significant digits, sorted
    by row then column."""
    A = sp.coo_matrix(sp.csr_matrix(matrix, dtype=float))
    order = np.lexsort((A.col, A.row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix_market(path) -> sp.csr_matrix:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "%%MatrixMarket" or head[1].lower() != "matrix":
        raise ParseError("missing %%MatrixMarket header", line=1)
    if [h.lower() for h in head[2:]] != ["coordinate", "real", "general"]:
        raise ParseError(f"unsupported format {' '.join(head[2:])!r}", line=1)
    k = 1
    while k < len(lines) and (not lines[k].strip() or lines[k].lstrip().startswith("%")):
        k += 1
    if k == len(lines):
        raise ParseError("missing size line", line=k + 1)
    try:
        m, n, nnz = (int(t) for t in lines[k].split())
    except ValueError:
        raise ParseError(f"bad size line {lines[k]!r}", line=k + 1) from None
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    e = 0
    for ln in range(k + 1, len(lines)):
        text = lines[ln].strip()
        if not text or text.startswith("%"):
            continue
        if e >= nnz:
            raise ParseError("more entries than declared", line=ln + 1)
        parts = text.split()
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            if len(parts) != 3:
                raise ValueError
        except (ValueError, IndexError):
            raise ParseError(f"bad entry {text!r}", line=ln + 1) from None
        if not (1 <= i <= m and 1 <= j <= n):
            raise ParseError(f"index ({i}, {j}) outside {m}x{n}", line=ln + 1)
        rows[e], cols[e], vals[e] = i - 1, j - 1, v
        e += 1
    if e != nnz:
        raise ParseError(f"expected {nnz} entries, found {e}", line=len(lines))
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, n))


def write_vector(vec, path) -> None:
    """Dense vector as a one-column Matrix Market array."""
    vec = np.asarray(vec, dtype=float).ravel()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{len(vec)} 1\n")
        for v in vec:
            fh.write(f"{v:.17g}\n")


def read_vector(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    if not lines or not lines[0].startswith("%%MatrixMarket matrix array"):
        raise ParseError("missing array header", line=1)
    body = [(i + 1, ln) for i, ln in enumerate(lines[1:], start=1)
            if ln.strip() and not ln.startswith("%")]
    try:
        m, n = (int(t) for t in body[0][1].split())
        vals = np.array([float(ln) for _, ln in body[1:]])
    except (ValueError, IndexError):
        raise ParseError("bad array body", line=body[0][0] if body else 2) from None
    if n != 1 or len(vals) != m:
        raise ParseError(f"expected {m} values in one column", line=len(lines))
    return vals


# saved Newton systems ------------------------------------------------------------

SYSTEM_BLOCKS = ("A", "B", "U", "T", "M1", "K1", "Lambda", "Mp", "Kp", "Ap")


def save_system(system, directory) -> None:
    """Write the blocks, residuals and scalars of a BlockSystem."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in SYSTEM_BLOCKS:
        write_matrix_market(getattr(system, name), d / f"{name}.mtx")
    for name, vec in zip(("F1", "F2", "F3", "F4"), system.F):
        write_vector(vec, d / f"{name}.mtx")
    p = system.params
    mesh = system.mesh
    meta = {f.name: getattr(p, f.name) for f in dataclasses.fields(p) if f.name != "g"}
    meta.update(gx=p.g[0], gy=p.g[1], nx=mesh.nx, ny=mesh.ny, width=mesh.width,
                height=mesh.height)
    meta.update({f"bc_{k}": v for k, v in system.dof.bc.items()})
    with open(d / "meta.txt", "w", encoding="ascii", newline="\n") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")


def load_system(directory):
    from .mesh import build_dofmap, build_rect_mesh
    from .model import BlockSystem
    from .physics import PhysParams

    d = Path(directory)
    meta = {}
    for ln, line in enumerate((d / "meta.txt").read_text().splitlines(), start=1):
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line=ln)
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    mesh = build_rect_mesh(float(meta["width"]), float(meta["height"]), int(meta["nx"]),
                           int(meta["ny"]))
    dof = build_dofmap(mesh, {k[3:]: v for k, v in meta.items() if k.startswith("bc_")})
    names = [f.name for f in dataclasses.fields(PhysParams) if f.name != "g"]
    params = PhysParams(**{k: float(meta[k]) for k in names},
                        g=(float(meta["gx"]), float(meta["gy"])))
    blocks = {name: read_matrix_market(d / f"{name}.mtx") for name in SYSTEM_BLOCKS}
    F = tuple(read_vector(d / f"{name}.mtx") for name in ("F1", "F2", "F3", "F4"))
    return BlockSystem(mesh=mesh, dof=dof, params=params, F=F, **blocks)


# VTK ----------------------------------------------------------------------------

@dataclass
class FieldSnapshot:
    time: float
    mesh: object
    fields: dict      # name -> nodal array (P1) or component-blocked P2 vector

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("snapshot time must be nonnegative")
        nv, n2 = self.mesh.n_vertices, self.mesh.n_p2
        for name, arr in self.fields.items():
            if len(arr) not in (nv, 2 * n2):
                raise ValueError(f"field {name!r} has length {len(arr)}, expected "
                                 f"{nv} (P1) or {2 * n2} (P2 vector)")

    @classmethod
    def from_state(cls, time, mesh, state):
        return cls(time, mesh, {"v": state.v, "p": state.p, "phi": state.phi, "mu": state.mu})


def write_vtk(snapshot: FieldSnapshot, path) -> None:
    """Legacy ASCII unstructured grid; P2 vectors are sampled at vertices."""
    mesh = snapshot.mesh
    nv, nt, n2 = mesh.n_vertices, mesh.n_triangles, mesh.n_p2
    out = ["# vtk DataFile Version 3.0",
           f"two-phase flow t={snapshot.time!r}",
           "ASCII",
           "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    out.append(f"POINT_DATA {nv}")
    for name, arr in snapshot.fields.items():
        arr = np.asarray(arr, dtype=float)
        if len(arr) == 2 * n2:
            out.append(f"VECTORS {name} double")
            out += [f"{a!r} {b!r} 0.0" for a, b in zip(arr[:nv], arr[n2:n2 + nv])]
        else:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(a)) for a in arr]
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


# CSV ------------------------------------------------------------------------------

def write_rows(path, header, rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


def write_csv(stats, path) -> None:
    """Per-step statistics with the fixed header."""
    write_rows(path, STATS_HEADER, stats.rows())


def read_csv(path):
    with open(path, encoding="ascii", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_study_summary(result, path) -> None:
    write_rows(path, ("label", "max_newton", "avg_newton", "mean_fgmres"), result.table())


# configuration -----------------------------------------------------------------

_PARAM_KEYS = ("rho1", "rho2", "eta1", "eta2", "sigma", "eps", "tau", "b", "s")
_SPEC_KEYS = {f"{blk}_{attr}" for blk in ("ahat", "kp", "mp", "m1", "s1", "s2")
              for attr in ("method", "tol", "maxit", "cycles", "amg")}
_KEYS = ({"preset", "nx", "ny", "width", "height", "n_steps", "solver", "mode",
          "newton_tol", "newton_maxit", "lumped_lambda", "output_dir", "vtk_every", "name",
          "gx", "gy", "inner_tol", "inner_maxit", "outer_tol", "outer_restart",
          "outer_maxit", "ns_schur_sign", "ch_schur_sign"}
         | set(_PARAM_KEYS) | _SPEC_KEYS
         | {f"bc_{side}" for side in ("bottom", "top", "left", "right")})


def _bool(text):
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_text(text: str):
    """Parse ``key=value`` lines (``#`` comments) into a RunConfig."""
    from .driver import PRESETS, RunConfig

    raw: dict[str, tuple[str, int]] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line=ln)
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _KEYS:
            raise ParseError(f"unknown key {key!r}", line=ln)
        if key in raw:
            raise ParseError(f"duplicate key {key!r}", line=ln)
        raw[key] = (val, ln)

    def get(key, conv, default=None):
        if key not in raw:
            return default
        val, ln = raw[key]
        try:
            return conv(val)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", line=ln) from None

    preset = get("preset", str, "benchmark-1")
    if preset not in PRESETS:
        raise ParseError(f"unknown preset {preset!r}", line=raw["preset"][1])
    params = PRESETS[preset]
    changes = {k: get(k, float) for k in _PARAM_KEYS if k in raw}
    g = (get("gx", float, params.g[0]), get("gy", float, params.g[1]))
    try:
        params = params.with_(g=g, **changes)
    except ValueError as exc:
        raise ParseError(str(exc)) from None

    cfg = RunConfig(params=params)
    simple = {"nx": int, "ny": int, "width": float, "height": float, "n_steps": int,
              "solver": str, "mode": str, "newton_tol": float, "newton_maxit": int,
              "lumped_lambda": _bool, "output_dir": str, "vtk_every": int, "name": str,
              "ns_schur_sign": int, "ch_schur_sign": int}
    upd = {k: get(k, conv) for k, conv in simple.items() if k in raw}
    settings = cfg.settings
    sign_upd = {k: upd.pop(k) for k in ("ns_schur_sign", "ch_schur_sign") if k in upd}
    for blk in ("ahat", "kp", "mp", "m1", "s1", "s2"):
        spec = getattr(settings, blk)
        blk_upd = {}
        for attr, conv in (("method", str), ("tol", float), ("maxit", int),
                           ("cycles", lambda t: None if t.lower() == "none" else int(t)),
                           ("amg", str)):
            if f"{blk}_{attr}" in raw:
                blk_upd[attr] = get(f"{blk}_{attr}", conv)
        if blk_upd:
            try:
                spec = dataclasses.replace(spec, **blk_upd)
            except ValueError as exc:
                raise ParseError(str(exc), line=raw[f"{blk}_{next(iter(blk_upd))}"][1]) from None
            settings = dataclasses.replace(settings, **{blk: spec})
    old = settings.inner
    inner = dataclasses.replace(old, tol_rel=get("inner_tol", float, old.tol_rel),
                                maxit=get("inner_maxit", int, old.maxit),
                                restart=get("inner_maxit", int, old.restart))
    ot = get("outer_tol", float, settings.outer.tol_rel)
    outer = dataclasses.replace(settings.outer, tol_rel=ot, tol_abs=ot,
                                restart=get("outer_restart", int, settings.outer.restart),
                                maxit=get("outer_maxit", int, settings.outer.maxit))
    settings = dataclasses.replace(settings, inner=inner, outer=outer, **sign_upd)
    bc = dict(cfg.bc)
    for side in ("bottom", "top", "left", "right"):
        if f"bc_{side}" in raw:
            bc[side] = get(f"bc_{side}", str)
    try:
        return dataclasses.replace(cfg, settings=settings, bc=bc, **upd)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def parse_config(path):
    return parse_config_text(Path(path).read_text())
