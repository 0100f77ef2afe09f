"""Configuration, run orchestration, file IO, and the command line.

Config files are JSON.  A run is a list of stages, each a step count plus
parameter overrides, over one of the models: plain Cahn-Hilliard ("ch"),
Cahn-Hilliard-Oono ("cho"), image segmentation ("segment"), image
inpainting ("inpaint") or tumor growth ("tumor").  Every run writes a
per-step diagnostics CSV, field snapshots (two-column CSV in 1D, PGM
heatmaps plus a min/max sidecar in 2D), and a manifest recording the
fully resolved configuration and the SHA-256 of every artifact.

The CHSAV_OUT environment variable overrides the output directory of any
command.  Exit codes: 0 success, 1 configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ChsavError, ConfigError, SolverError, StepError
from .linalg import StepOperatorContext
from .manufactured import (SOLUTION_TAGS, get_solution, run_convergence,
                           run_zeta_study)
from .mesh_fem import (Mesh, NodalField, assemble_lumped_mass,
                       assemble_stiffness, build_friedrichs_keller,
                       build_interval_mesh, nodal_interpolate)
from .models import (ChoParams, InpaintParams, SegParams, TumorParams,
                     cho_source, constant_mobility, inpaint_source,
                     seg_source, seg_update_intensities, tumor_initial_phi,
                     tumor_phi_step_inputs, tumor_sigma_step)
from .sav_core import (DIAGNOSTICS_HEADER, SavState, SchemeParams,
                       q_functional, quartic_double_well, rsav_step,
                       unit_double_well)

MODEL_NAMES = ("ch", "cho", "segment", "inpaint", "tumor")

_SCHEME_DEFAULTS = {
    "eps": None, "tau": None, "C0": 1.0, "eta_relax": 0.0, "M_relax": 0.0,
    "m0": 1.0, "zeta_policy": "optimal", "zeta_fixed": 1.0, "tol": 1e-12,
}


# --- images ----------------------------------------------------------------

@dataclass(frozen=True)
class GrayscaleImage:
    """Pixel array of shape (height, width), values in [0, 1], row 0 at
    the top of the picture."""

    width: int
    height: int
    pixels: np.ndarray


def read_pgm(path) -> GrayscaleImage:
    """Read a P2 (ascii) or P5 (binary) PGM, rescaled to [0, 1]."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise ConfigError(f"cannot read image {path}: {exc}")

    # header tokens, skipping '#' comments; payload begins after maxval
    tokens, pos = [], 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise ConfigError(f"{path}: truncated PGM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace() \
                    and raw[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(raw[start:pos])
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ConfigError(f"{path}: not a P2/P5 PGM (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ConfigError(f"{path}: malformed PGM header")
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ConfigError(f"{path}: invalid PGM dimensions or maxval")

    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        n = width * height
        dtype = ">u2" if maxval > 255 else np.uint8
        itemsize = 2 if maxval > 255 else 1
        if len(raw) - pos < n * itemsize:
            raise ConfigError(f"{path}: truncated PGM payload")
        data = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
    else:
        try:
            data = np.array(raw[pos:].split(), dtype=float)
        except ValueError:
            raise ConfigError(f"{path}: non-numeric P2 payload")
        if data.size != width * height:
            raise ConfigError(f"{path}: P2 payload has {data.size} values, "
                              f"expected {width * height}")
        if data.min() < 0 or data.max() > maxval:
            raise ConfigError(f"{path}: P2 values outside [0, maxval]")
    pixels = data.astype(float).reshape(height, width) / maxval
    return GrayscaleImage(width, height, pixels)


def write_pgm(img: GrayscaleImage, path) -> None:
    """Write a binary P5 PGM at maxval 255 (values rounded half up)."""
    px = np.clip(np.floor(img.pixels * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode())
        fh.write(px.tobytes())


def image_to_field(img: GrayscaleImage, mesh: Mesh) -> NodalField:
    """Map pixels onto the node grid; picture row 0 lands on the top row
    of the domain (largest y).  Mismatched sizes are resampled by nearest
    neighbor with a warning."""
    if mesh.dimension != 2:
        raise ConfigError("images map onto 2D meshes only")
    gy, gx = mesh.grid_shape
    pix = img.pixels
    if (img.height, img.width) != (gy, gx):
        warnings.warn(
            f"image {img.width}x{img.height} resampled to node grid "
            f"{gx}x{gy} by nearest neighbor")
        rows = np.round(np.linspace(0, img.height - 1, gy)).astype(int)
        cols = np.round(np.linspace(0, img.width - 1, gx)).astype(int)
        pix = pix[np.ix_(rows, cols)]
    return np.flipud(pix).ravel().copy()


def field_to_image(field: NodalField, mesh: Mesh, lo: float,
                   hi: float) -> GrayscaleImage:
    grid = field.reshape(mesh.grid_shape)
    if hi > lo:
        scaled = (grid - lo) / (hi - lo)
    else:
        scaled = np.full_like(grid, 128.0 / 255.0)
    return GrayscaleImage(mesh.grid_shape[1], mesh.grid_shape[0],
                          np.flipud(np.clip(scaled, 0.0, 1.0)))


def synthetic_image(kind: str, n: int) -> GrayscaleImage:
    """Deterministic n-by-n test images: 'blobs' (grayscale), 'stripes'
    (binary), 'band_mask' (binary keep-mask with a damaged band)."""
    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    x = ii / (n - 1.0)
    y = 1.0 - jj / (n - 1.0)
    if kind == "blobs":
        d1 = np.hypot(x - 0.35, y - 0.6)
        d2 = np.hypot((x - 0.72) / 1.4, y - 0.3)
        px = 0.08 + 0.9 * (d1 < 0.18) + 0.55 * (d2 < 0.14)
        px = np.clip(px, 0.0, 1.0)
    elif kind == "stripes":
        px = ((np.floor(x * 8.0) % 2) == 0).astype(float)
    elif kind == "band_mask":
        px = (~((y > 0.42) & (y < 0.58))).astype(float)
    else:
        raise ConfigError(f"unknown synthetic image '{kind}'; "
                          "valid: blobs, stripes, band_mask")
    return GrayscaleImage(n, n, px)


# --- snapshots and plots ----------------------------------------------------

def emit_field_snapshot(field: NodalField, mesh: Mesh, path, step=None,
                        time=None) -> list:
    """1D: two-column CSV (x, value).  2D: PGM heatmap (linear map of
    [min, max] to [0, 255]; constant fields become uniform gray 128) plus
    a sidecar text file with min/max/step/time."""
    field = np.asarray(field, dtype=float)
    path = str(path)
    if mesh.dimension == 1:
        lines = ["x,value"]
        for x, v in zip(mesh.nodes, field):
            lines.append(f"{x:.17g},{v:.17g}")
        _write_text(path, "\n".join(lines) + "\n")
        return [path]
    lo, hi = float(field.min()), float(field.max())
    write_pgm(field_to_image(field, mesh, lo, hi), path)
    side = path + ".txt"
    _write_text(side, f"min {lo:.17g}\nmax {hi:.17g}\n"
                      f"step {-1 if step is None else step}\n"
                      f"time {float('nan') if time is None else time:.17g}\n")
    return [path, side]


def emit_line_plot(series, path, title="", xlabel="", ylabel="") -> None:
    """Render named (x, y) series into an SVG with axes and a legend."""
    if not series:
        raise ValueError("no series to plot")
    for label, x, y in series:
        if len(x) != len(y):
            raise ValueError(f"series '{label}' has mismatched lengths")
        if len(x) == 0:
            raise ValueError(f"series '{label}' is empty")
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "chsav"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, x, y in series:
        ax.plot(x, y, label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _write_text(path, text) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


# --- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    """Fully resolved run description (see load_config)."""

    mesh: dict
    model: str
    model_params: dict
    scheme: dict
    stages: list
    output_dir: str
    snapshot_every: int | None
    snapshot_steps: set | None
    seed: int
    resolved: dict = field(repr=False, default_factory=dict)


def _require(doc, key, context):
    if key not in doc:
        raise ConfigError(f"{context}: missing required field '{key}'")
    return doc[key]


def load_config(path) -> RunConfig:
    try:
        text = open(path).read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}")
    return validate_config(doc)


def validate_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    mesh = _require(doc, "mesh", "config")
    dim = _require(mesh, "dim", "mesh")
    if dim == 1:
        if int(_require(mesh, "cells", "mesh")) < 1:
            raise ConfigError("mesh: cells must be >= 1")
    elif dim == 2:
        if int(_require(mesh, "nx", "mesh")) < 1 or \
                int(_require(mesh, "ny", "mesh")) < 1:
            raise ConfigError("mesh: nx and ny must be >= 1")
    else:
        raise ConfigError("mesh: dim must be 1 or 2")

    model_doc = _require(doc, "model", "config")
    name = _require(model_doc, "name", "model")
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model '{name}'; valid models: "
                          + ", ".join(MODEL_NAMES))
    model_params = {k: v for k, v in model_doc.items() if k != "name"}

    scheme = dict(_SCHEME_DEFAULTS)
    scheme.update(doc.get("scheme", {}))
    for key in ("eps", "tau"):
        if scheme[key] is None:
            raise ConfigError(f"scheme: missing required field '{key}'")
    unknown = set(scheme) - set(_SCHEME_DEFAULTS)
    if unknown:
        raise ConfigError(f"scheme: unknown fields {sorted(unknown)}")

    stages_doc = doc.get("stages")
    if stages_doc is None:
        stages_doc = [{"steps": _require(doc, "steps", "config")}]
    if not stages_doc:
        raise ConfigError("stages must be non-empty")
    stages = []
    for i, st in enumerate(stages_doc):
        steps = int(_require(st, "steps", f"stages[{i}]"))
        if steps < 1:
            raise ConfigError(f"stages[{i}]: steps must be >= 1")
        stages.append({"steps": steps,
                       "scheme": dict(st.get("scheme", {})),
                       "model": dict(st.get("model", {}))})

    # validate per-stage effective scheme params now, not mid-run
    for i, st in enumerate(stages):
        eff = dict(scheme)
        eff.update(st["scheme"])
        SchemeParams(**eff)
        if name == "cho":
            eta = st["model"].get("eta", model_params.get("eta"))
            if eta is None:
                raise ConfigError("cho model requires 'eta'")
            if eff["tau"] * eta >= 1.0:
                raise ConfigError(
                    f"stages[{i}]: tau*eta = {eff['tau'] * eta} >= 1 breaks "
                    "the mean recursion (need tau < 1/eta)")

    every = doc.get("snapshot_every")
    if every is not None and int(every) < 1:
        raise ConfigError("snapshot_every must be >= 1")
    steps_list = doc.get("snapshot_steps")
    snap_steps = set(int(s) for s in steps_list) if steps_list else None
    if every is None and snap_steps is None:
        total = sum(st["steps"] for st in stages)
        snap_steps = {0, total}

    cfg = RunConfig(
        mesh=dict(mesh), model=name, model_params=model_params,
        scheme=scheme, stages=stages,
        output_dir=str(doc.get("output_dir", "out")),
        snapshot_every=None if every is None else int(every),
        snapshot_steps=snap_steps,
        seed=int(doc.get("seed", 0)))
    cfg.resolved = {
        "mesh": cfg.mesh, "model": dict(model_doc), "scheme": cfg.scheme,
        "stages": cfg.stages, "output_dir": cfg.output_dir,
        "snapshot_every": cfg.snapshot_every,
        "snapshot_steps": sorted(cfg.snapshot_steps) if cfg.snapshot_steps
        else None,
        "seed": cfg.seed,
    }
    return cfg


def _resolve_out(cfg_dir, flag_dir=None) -> str:
    env = os.environ.get("CHSAV_OUT")
    out = env or flag_dir or cfg_dir
    os.makedirs(out, exist_ok=True)
    return out


def _load_image_spec(spec, mesh: Mesh) -> NodalField:
    """Image spec: 'synthetic:<kind>' or a PGM path; mapped to nodes."""
    if isinstance(spec, str) and spec.startswith("synthetic:"):
        img = synthetic_image(spec.split(":", 1)[1], mesh.grid_shape[1])
    else:
        img = read_pgm(spec)
    return image_to_field(img, mesh)


# --- run orchestration -------------------------------------------------------

def _build_mesh(cfg: RunConfig) -> Mesh:
    if cfg.mesh["dim"] == 1:
        a = float(cfg.mesh.get("a", 0.0))
        b = float(cfg.mesh.get("b", 1.0))
        return build_interval_mesh(a, b, int(cfg.mesh["cells"]))
    return build_friedrichs_keller(int(cfg.mesh["nx"]), int(cfg.mesh["ny"]))


class _ModelDriver:
    """Per-model state: initial fields, per-step sources, post-step hooks."""

    def __init__(self, cfg: RunConfig, mesh: Mesh, mass, rng):
        self.cfg = cfg
        self.mesh = mesh
        self.mass = mass
        p = dict(cfg.model_params)
        name = cfg.model
        self.pot = quartic_double_well()
        self.extra_fields = {}
        if name in ("ch", "cho"):
            mean = float(p.get("phi0_mean", -0.5))
            width = float(p.get("phi0_width", 0.2))
            self.phi0 = mean + width * rng.uniform(0.0, 1.0, mesh.n_nodes)
            if name == "cho":
                c = p.get("c")
                if c is None:
                    c = float(np.dot(mass.diag, self.phi0)) / mass.total
                self.cho = ChoParams(eta=float(p["eta"]), c=float(c))
        elif name == "segment":
            image = _load_image_spec(_require(p, "image", "model"), mesh)
            self.seg = SegParams(
                eta=float(p.get("eta", 0.1)),
                lambda1=float(p.get("lambda1", 0.65)),
                lambda2=float(p.get("lambda2", 1.0)),
                image=image,
                c1=float(p.get("c1", 1.0)), c2=float(p.get("c2", 0.0)))
            self.pot = unit_double_well()
            self.phi0 = image.copy()
        elif name == "inpaint":
            raw = _load_image_spec(_require(p, "image", "model"), mesh)
            image = np.where(raw >= 0.5, 1.0, -1.0)
            mask = _load_image_spec(_require(p, "mask", "model"), mesh)
            mask = np.where(mask >= 0.5, 1.0, 0.0)
            self.inp = InpaintParams(lambda0=float(p.get("lambda0", 10.0)),
                                     mask=mask, image=image)
            self.phi0 = np.where(mask == 1.0, image, 0.0)
        elif name == "tumor":
            n_mob = constant_mobility(float(p.get("n_mobility", 1.0)))
            self.tum = TumorParams(
                chi_sigma=float(p.get("chi_sigma", 25.0)),
                chi=float(p.get("chi", 5.0)),
                eta=float(p.get("eta", 5.0)),
                P_rate=float(p.get("P_rate", 1.0)),
                A_rate=float(p.get("A_rate", 0.0)),
                C_rate=float(p.get("C_rate", 1.0)),
                sigma_inf=float(p.get("sigma_inf", 1.0)),
                n_mob=n_mob,
                sigma=np.full(mesh.n_nodes, float(p.get("sigma0", 1.0))))
            self.phi0 = tumor_initial_phi(mesh)
        else:
            raise ConfigError(f"unknown model '{name}'")

    def apply_stage_overrides(self, overrides: dict) -> None:
        if not overrides:
            return
        name = self.cfg.model
        if name == "cho" and ("eta" in overrides or "c" in overrides):
            self.cho = ChoParams(
                eta=float(overrides.get("eta", self.cho.eta)),
                c=float(overrides.get("c", self.cho.c)))
        elif name == "segment":
            for key in ("eta", "lambda1", "lambda2", "c1", "c2"):
                if key in overrides:
                    setattr(self.seg, key, float(overrides[key]))
        elif name == "inpaint" and "lambda0" in overrides:
            self.inp = InpaintParams(float(overrides["lambda0"]),
                                     self.inp.mask, self.inp.image)
        elif name == "tumor":
            for key in ("chi_sigma", "chi", "eta", "P_rate", "A_rate",
                        "C_rate", "sigma_inf"):
                if key in overrides:
                    setattr(self.tum, key, float(overrides[key]))

    def sources(self, state: SavState, ctx: StepOperatorContext, tau: float):
        name = self.cfg.model
        zeros = np.zeros(self.mesh.n_nodes)
        if name == "ch":
            return zeros, zeros, None
        if name == "cho":
            return cho_source(state.phi, self.cho), zeros, None
        if name == "segment":
            return seg_source(state.phi, self.seg), zeros, None
        if name == "inpaint":
            return inpaint_source(state.phi, self.inp), zeros, None
        sigma = tumor_sigma_step(self.tum.sigma, state.phi, self.tum,
                                 ctx, tau)
        self.tum.sigma = sigma
        self.extra_fields["sigma"] = sigma
        return tumor_phi_step_inputs(sigma, state.phi, self.tum, ctx, tau)

    def post_step(self, state: SavState) -> None:
        if self.cfg.model == "segment":
            c1, c2 = seg_update_intensities(state.phi, self.seg, self.mass)
            img = self.seg.image
            lo, hi = float(img.min()), float(img.max())
            slack = 1e-9 * max(1.0, hi - lo)
            if not (lo - slack <= c1 <= hi + slack
                    and lo - slack <= c2 <= hi + slack):
                raise StepError(f"intensities ({c1}, {c2}) escaped the "
                                f"image range [{lo}, {hi}]")
            self.seg.c1, self.seg.c2 = c1, c2


def execute_run(cfg: RunConfig, out_dir=None) -> dict:
    """Run all stages, write artifacts, return the manifest dict."""
    out = _resolve_out(cfg.output_dir, out_dir)
    rng = np.random.default_rng(cfg.seed)
    mesh = _build_mesh(cfg)
    mass = assemble_lumped_mass(mesh)
    stiff = assemble_stiffness(mesh)
    driver = _ModelDriver(cfg, mesh, mass, rng)

    mobility = float(cfg.model_params.get("mobility", 1.0))
    if mobility <= 0.0:
        raise ConfigError("mobility must be positive")

    artifacts = []

    def snapshot(state, tag="phi"):
        fields = {"phi": state.phi}
        fields.update(driver.extra_fields)
        for fname, vals in fields.items():
            ext = "csv" if mesh.dimension == 1 else "pgm"
            path = os.path.join(out, f"{fname}_{state.step:06d}.{ext}")
            artifacts.extend(emit_field_snapshot(
                vals, mesh, path, step=state.step, time=state.time))

    def want_snapshot(step):
        if cfg.snapshot_steps is not None and step in cfg.snapshot_steps:
            return True
        return cfg.snapshot_every is not None and \
            step % cfg.snapshot_every == 0

    base = dict(cfg.scheme)
    rows = []
    phi0 = driver.phi0
    pot = driver.pot
    state = SavState(phi0, q_functional(phi0, pot, base["eps"],
                                        base["C0"], mass))
    if want_snapshot(0):
        snapshot(state)

    for stage in cfg.stages:
        eff = dict(base)
        eff.update(stage["scheme"])
        params = SchemeParams(**eff)
        driver.apply_stage_overrides(stage["model"])
        stiff_m = stiff if mobility == 1.0 else mobility * stiff
        ctx = StepOperatorContext(mass, stiff, stiff_m, params.eps,
                                  params.tau, mesh)
        for _ in range(stage["steps"]):
            f, g, extra = driver.sources(state, ctx, params.tau)
            state, _mu, _r, row = rsav_step(state, ctx, pot, params,
                                            f, g, extra)
            driver.post_step(state)
            rows.append(row)
            if want_snapshot(state.step):
                snapshot(state)

    diag_path = os.path.join(out, "diagnostics.csv")
    _write_text(diag_path, DIAGNOSTICS_HEADER + "\n"
                + "\n".join(r.to_csv() for r in rows) + "\n")
    artifacts.append(diag_path)

    if rows:
        t = [r.time for r in rows]
        plot_path = os.path.join(out, "energy.svg")
        emit_line_plot([("E_GL", t, [r.E_GL for r in rows]),
                        ("G", t, [r.G for r in rows])],
                       plot_path, xlabel="t", ylabel="energy",
                       title=f"{cfg.model}: energies")
        artifacts.append(plot_path)

    return _write_manifest(out, cfg.resolved, artifacts)


def _write_manifest(out, resolved_config, artifact_paths) -> dict:
    manifest = {
        "config": resolved_config,
        "artifacts": {os.path.relpath(p, out): _sha256(p)
                      for p in sorted(set(map(str, artifact_paths)))},
    }
    path = os.path.join(out, "manifest.json")
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --- built-in application configs -------------------------------------------

def default_app_config(name: str) -> dict:
    """Reference configuration for each application run."""
    if name == "cho":
        return {
            "mesh": {"dim": 2, "nx": 100, "ny": 100},
            "model": {"name": "cho", "eta": 0.001, "phi0_mean": -0.5,
                      "phi0_width": 0.2},
            "scheme": {"eps": 0.01, "tau": 0.01},
            "stages": [{"steps": 50000}],
            "snapshot_steps": [0, 500, 10000, 50000],
            "seed": 1234,
            "output_dir": "out-cho",
        }
    if name == "segment":
        return {
            "mesh": {"dim": 2, "nx": 100, "ny": 100},
            "model": {"name": "segment", "image": "synthetic:blobs",
                      "eta": 0.1, "lambda1": 0.65, "lambda2": 1.0},
            "scheme": {"eps": 80.0, "tau": 0.001},
            "stages": [{"steps": 5000},
                       {"steps": 5000, "scheme": {"eps": 0.01}}],
            "snapshot_steps": [0, 5000, 10000],
            "seed": 0,
            "output_dir": "out-segment",
        }
    if name == "inpaint":
        return {
            "mesh": {"dim": 2, "nx": 63, "ny": 63},
            "model": {"name": "inpaint", "image": "synthetic:stripes",
                      "mask": "synthetic:band_mask", "lambda0": 10.0},
            "scheme": {"eps": 100.0, "tau": 0.1},
            "stages": [{"steps": 3000},
                       {"steps": 1000, "scheme": {"eps": 5.0, "tau": 1.0},
                        "model": {"lambda0": 0.1}}],
            "snapshot_steps": [0, 3000, 4000],
            "seed": 0,
            "output_dir": "out-inpaint",
        }
    if name == "tumor":
        return {
            "mesh": {"dim": 2, "nx": 100, "ny": 100},
            "model": {"name": "tumor", "chi_sigma": 25.0, "chi": 5.0,
                      "eta": 5.0, "P_rate": 1.0, "A_rate": 0.0,
                      "C_rate": 1.0, "sigma_inf": 1.0, "sigma0": 1.0},
            "scheme": {"eps": 0.01, "tau": 0.001},
            "stages": [{"steps": 18000}],
            "snapshot_steps": [0, 8000, 13000, 18000],
            "seed": 0,
            "output_dir": "out-tumor",
        }
    raise ConfigError(f"unknown app '{name}'; valid apps: cho, segment, "
                      "inpaint, tumor")


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], val)
        else:
            merged[key] = copy.deepcopy(val)
    return merged


# --- command line ------------------------------------------------------------

def _parse_floats(text) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"cannot parse float list '{text}'")


def cmd_convergence(args) -> int:
    out = _resolve_out(args.out)
    sol = get_solution(args.solution)
    taus = _parse_floats(args.taus)
    zetas = _parse_floats(args.zetas)
    table = run_convergence(sol, taus, zetas, args.h, args.T,
                            eta=args.eta, M=args.M)
    csv_path = os.path.join(out, "table.csv")
    _write_text(csv_path, table.to_csv())
    artifacts = [csv_path]
    ok_cells = [c for c in table.cells if c.failed is None]
    if ok_cells:
        series = []
        for zeta in zetas:
            pts = [(c.tau, c.error) for c in ok_cells
                   if np.isclose(c.zeta, zeta)]
            if pts:
                series.append((f"zeta={zeta:g}", [p[0] for p in pts],
                               [p[1] for p in pts]))
        plot = os.path.join(out, "error_vs_tau.svg")
        emit_line_plot(series, plot, xlabel="tau", ylabel="L2L2 error",
                       title=f"{args.solution}: error vs tau")
        artifacts.append(plot)
    _write_manifest(out, {
        "command": "convergence", "solution": args.solution, "taus": taus,
        "zetas": zetas, "h": args.h, "T": args.T, "eta": args.eta,
        "M": args.M}, artifacts)
    failed = [c for c in table.cells if c.failed is not None]
    for c in failed:
        print(f"cell (tau={c.tau}, zeta={c.zeta}) failed: {c.failed}",
              file=sys.stderr)
    return 2 if failed else 0


def cmd_zeta_study(args) -> int:
    out = _resolve_out(args.out)
    sol = get_solution(args.solution)
    study = run_zeta_study(sol, args.tau, args.h, args.T, args.eta, args.M)
    csv_path = os.path.join(out, "zeta_history.csv")
    _write_text(csv_path, study.to_csv())
    steps = [row.step for row in study.rows]
    plot = os.path.join(out, "zeta_history.svg")
    emit_line_plot([(f"eta={args.eta:g}, M={args.M:g}", steps,
                     list(study.zetas))], plot,
                   xlabel="step", ylabel="zeta",
                   title=f"{args.solution}: selected zeta")
    _write_manifest(out, {
        "command": "zeta-study", "solution": args.solution, "tau": args.tau,
        "h": args.h, "T": args.T, "eta": args.eta, "M": args.M},
        [csv_path, plot])
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    execute_run(cfg, out_dir=args.out)
    return 0


def cmd_app(args) -> int:
    doc = default_app_config(args.name)
    if args.config:
        try:
            override = json.loads(open(args.config).read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: parse error at line "
                              f"{exc.lineno}: {exc.msg}")
        doc = _deep_merge(doc, override)
    cfg = validate_config(doc)
    execute_run(cfg, out_dir=args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chsav",
        description="Relaxed-SAV Cahn-Hilliard solver and experiment runner")
    sub = parser.add_subparsers(dest="command")

    conv = sub.add_parser("convergence", help="time-convergence error table")
    conv.add_argument("--solution", required=True, choices=SOLUTION_TAGS)
    conv.add_argument("--taus", required=True,
                      help="comma-separated step sizes")
    conv.add_argument("--zetas", required=True,
                      help="comma-separated fixed relaxation weights")
    conv.add_argument("--h", type=float, default=0.001)
    conv.add_argument("--T", type=float, default=5.0)
    conv.add_argument("--eta", type=float, default=0.0)
    conv.add_argument("--M", type=float, default=0.0)
    conv.add_argument("--out", default="out-convergence")
    conv.set_defaults(func=cmd_convergence)

    zs = sub.add_parser("zeta-study", help="optimal-zeta switching history")
    zs.add_argument("--solution", required=True, choices=SOLUTION_TAGS)
    zs.add_argument("--tau", type=float, default=0.01)
    zs.add_argument("--h", type=float, default=0.01)
    zs.add_argument("--T", type=float, default=5.0)
    zs.add_argument("--eta", type=float, required=True)
    zs.add_argument("--M", type=float, required=True)
    zs.add_argument("--out", default="out-zeta")
    zs.set_defaults(func=cmd_zeta_study)

    run = sub.add_parser("run", help="execute a generic run config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.set_defaults(func=cmd_run)

    app = sub.add_parser("app", help="run a packaged application")
    app.add_argument("name", choices=("cho", "segment", "inpaint", "tumor"))
    app.add_argument("--config", default=None,
                     help="JSON overrides merged onto the app defaults")
    app.add_argument("--out", default=None)
    app.set_defaults(func=cmd_app)
    return parser


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, StepError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except ChsavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))
