"""Stage orchestration: files in, files out, deterministic for a fixed seed.

Stages communicate exclusively through plain files inside the run directory,
so any stage can be rerun on its own:

    register   -> registered/*.csv, reference.csv
    decompose  -> retained_set.csv, model_coeffs.csv, field_coeffs.csv [, b_model_coeffs.csv]
    fit        -> gasp_fits.npz, gasp_diag.csv [, gasp_fits_b.npz]
    calibrate  -> draws.csv, run_meta.json
    predict    -> bias_band.csv, reality_band.csv, field_band.csv, pure_model.csv
    extrapolate-> same_type_band.csv, condition_b_*.csv, delta_shift_band.csv
    all        -> everything above + manifest.json
"""

from __future__ import annotations

import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import emulator as em
from . import prediction as pred
from . import registration as reg
from . import wavelet as wv
from .errors import ConfigError, StageError
from .iodesign import (Curve, DesignMatrix, IUMap, load_curve, load_curves,
                       load_design, load_iu_map, write_curve)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("register", "decompose", "fit", "calibrate", "predict", "extrapolate")
FLOAT_FMT = "%.17g"


@dataclass
class RunConfig:
    iumap: str
    field_dir: str
    model_dir: str
    design: str
    out: str
    grid_J: int
    grid_t0: float
    grid_t1: float
    windows: tuple[reg.EventWindow, ...]
    seed: int
    keep_levels: int = 3
    pct: float = 0.025
    n_saved: int = 1000
    thin: int = 200
    alpha: float = 0.1
    band_mode: str = "symmetric"
    fit_workers: int = 1
    fit_n_starts: int | None = None
    fit_maxfev_per_param: int = 150
    register_model_curves: bool = False
    exclude_model: tuple[str, ...] = ()
    emit_ensembles: bool = False
    extrapolate_same_type: bool = False
    new_nominals_mode: str = "off"  # off | additive | multiplicative | both
    model_dir_b: str | None = None
    design_b: str | None = None
    delta_shift_run: str | None = None
    nominal_run: str | None = None
    base_dir: Path = field(default_factory=Path)

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    @property
    def out_dir(self) -> Path:
        q = Path(self.out)
        return q if q.is_absolute() else self.base_dir / q

    def grid(self) -> reg.GridSpec:
        return reg.GridSpec(self.grid_J, self.grid_t0, self.grid_t1)

    def validate_paths(self) -> None:
        for name in ("iumap", "design"):
            p = self.path(getattr(self, name))
            if not p.is_file():
                raise ConfigError(f"{name} file not found: {p}")
        for name in ("field_dir", "model_dir"):
            p = self.path(getattr(self, name))
            if not p.is_dir():
                raise ConfigError(f"{name} not found: {p}")
        if self.new_nominals_mode != "off":
            if not (self.model_dir_b and self.design_b):
                raise ConfigError("new-nominals extrapolation needs model_dir_b and design_b")


def load_run_config(path, out: str | None = None, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"run config not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}")

    def need(section, key):
        try:
            return doc[section][key]
        except KeyError:
            raise ConfigError(f"{path}: missing [{section}] {key}")

    windows = []
    for blk in doc.get("registration", {}).get("window", []):
        windows.append(reg.EventWindow(lo=float(blk["lo"]), hi=float(blk["hi"]),
                                       features=tuple(blk["features"])))
    if not windows:
        raise ConfigError(f"{path}: no [[registration.window]] blocks")

    mc = doc.get("mcmc", {})
    if seed is None and "seed" not in mc:
        raise ConfigError(f"{path}: [mcmc] seed is mandatory for reproducibility")
    wl = doc.get("wavelet", {})
    band = doc.get("band", {})
    fit = doc.get("fit", {})
    ex = doc.get("extrapolate", {})
    paths = doc.get("paths", {})

    cfg = RunConfig(
        iumap=need("paths", "iumap"),
        field_dir=need("paths", "field_dir"),
        model_dir=need("paths", "model_dir"),
        design=need("paths", "design"),
        out=out if out is not None else paths.get("out", "run"),
        grid_J=int(need("grid", "levels")),
        grid_t0=float(need("grid", "t0")),
        grid_t1=float(need("grid", "t1")),
        windows=tuple(windows),
        seed=int(seed if seed is not None else mc["seed"]),
        keep_levels=int(wl.get("keep_levels", 3)),
        pct=float(wl.get("pct", 0.025)),
        n_saved=int(mc.get("draws", 1000)),
        thin=int(mc.get("thin", 200)),
        alpha=float(band.get("alpha", 0.1)),
        band_mode=str(band.get("mode", "symmetric")),
        fit_workers=int(fit.get("workers", 1)),
        fit_n_starts=int(fit["n_starts"]) if "n_starts" in fit else None,
        fit_maxfev_per_param=int(fit.get("maxfev_per_param", 150)),
        register_model_curves=bool(doc.get("registration", {}).get("register_model_curves", False)),
        exclude_model=tuple(paths.get("exclude_model", ())),
        emit_ensembles=bool(band.get("emit_ensembles", False)),
        extrapolate_same_type=bool(ex.get("same_type", False)),
        new_nominals_mode=str(ex.get("new_nominals_mode", "off")),
        model_dir_b=paths.get("model_dir_b"),
        design_b=paths.get("design_b"),
        delta_shift_run=paths.get("delta_shift_run"),
        nominal_run=paths.get("nominal_run"),
        base_dir=path.parent,
    )
    if cfg.new_nominals_mode not in ("off", "additive", "multiplicative", "both"):
        raise ConfigError(f"bad new_nominals_mode {cfg.new_nominals_mode!r}")
    return cfg


# ---------------------------------------------------------------------------
# Seed bookkeeping: one master seed, independent per-purpose streams.
# ---------------------------------------------------------------------------

def _streams(seed: int) -> dict:
    seq = np.random.SeedSequence(seed)
    fit_seq, mcmc_seq, predict_seq, extrap_seq = seq.spawn(4)
    return {
        "fit": fit_seq,
        "mcmc": int(mcmc_seq.generate_state(1)[0]),
        "predict": predict_seq,
        "extrapolate": extrap_seq,
    }


# ---------------------------------------------------------------------------
# Small file helpers
# ---------------------------------------------------------------------------

def _write_matrix_csv(path, header: list[str], rows: np.ndarray,
                      row_labels: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        cols = (["label"] + header) if row_labels is not None else header
        fh.write(",".join(cols) + "\n")
        for i, row in enumerate(np.atleast_2d(rows)):
            cells = [FLOAT_FMT % v for v in row]
            if row_labels is not None:
                cells = [row_labels[i]] + cells
            fh.write(",".join(cells) + "\n")


def _read_matrix_csv(path, with_labels: bool = True):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        labels, rows = [], []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            if with_labels:
                labels.append(parts[0])
                rows.append([float(v) for v in parts[1:]])
            else:
                rows.append([float(v) for v in parts])
    cols = header[1:] if with_labels else header
    return cols, labels, np.array(rows)


def write_band(band: pred.Band, path) -> None:
    t = band.center.times()
    with open(path, "w", newline="") as fh:
        fh.write("t,center,lower,upper\n")
        for row in zip(t, band.center.y, band.lower.y, band.upper.y):
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def _write_grid_curve(g: reg.GridCurve, path) -> None:
    write_curve(g.to_curve(), path)


def save_fits(fits: list[em.GaspFit], path) -> None:
    np.savez(
        path,
        design=fits[0].design,
        response=np.stack([f.response for f in fits]),
        mu=np.array([f.hyper.mu for f in fits]),
        lam=np.array([f.hyper.lam for f in fits]),
        alpha=np.stack([f.hyper.alpha for f in fits]),
        beta=np.stack([f.hyper.beta for f in fits]),
        nugget=np.array([f.nugget for f in fits]),
        const=np.array([f.is_constant for f in fits]),
        labels=np.array([f.label for f in fits]),
    )


def load_fits(path) -> list[em.GaspFit]:
    z = np.load(path, allow_pickle=False)
    fits = []
    for i in range(len(z["mu"])):
        if z["const"][i]:
            fits.append(em._constant_fit(z["design"], z["response"][i],
                                         float(z["nugget"][i]), str(z["labels"][i])))
            continue
        hyper = em.GaspHyper(mu=float(z["mu"][i]), lam=float(z["lam"][i]),
                             alpha=z["alpha"][i], beta=z["beta"][i])
        stub = em.GaspFit(hyper=hyper, design=z["design"], response=z["response"][i],
                          chol=None, rinv_resid=None, rinv=None,
                          nugget=float(z["nugget"][i]), label=str(z["labels"][i]))
        fits.append(em.refit_frozen(stub, z["design"], z["response"][i]))
    return fits


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_register(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    (out / "registered").mkdir(parents=True, exist_ok=True)
    grid = cfg.grid()
    model = _load_model_curves(cfg)
    field = load_curves(cfg.path(cfg.field_dir), kind="field")
    if not field:
        raise ConfigError(f"no field curves in {cfg.path(cfg.field_dir)}")

    reference = reg.build_reference_curve(model, grid)
    ref_anchors = reg.locate_anchors(reference, cfg.windows)
    _write_grid_curve(reference, out / "reference.csv")

    registered = []
    for c in field:
        src = reg.locate_anchors(c, cfg.windows)
        registered.append(reg.register_curve(c, src, ref_anchors))
    for c in registered:
        write_curve(c, out / "registered" / f"{c.label}.reg.csv")

    if cfg.register_model_curves:
        (out / "registered_model").mkdir(exist_ok=True)
        for c in model:
            src = reg.locate_anchors(c, cfg.windows)
            rc = reg.register_curve(c, src, ref_anchors)
            write_curve(rc, out / "registered_model" / f"{c.label}.reg.csv")

    return {"n_field": len(field), "n_model": len(model),
            "reference": "reference.csv", "registered_dir": "registered"}


def _load_model_curves(cfg: RunConfig) -> list[Curve]:
    model = load_curves(cfg.path(cfg.model_dir), kind="model")
    if cfg.exclude_model:
        drop = set(cfg.exclude_model)
        model = [c for c in model if c.label not in drop]
        for k, c in enumerate(model):
            c.design_index = k
    if not model:
        raise ConfigError(f"no model curves in {cfg.path(cfg.model_dir)}")
    return model


def _registered_field_curves(cfg: RunConfig) -> list[Curve]:
    d = cfg.out_dir / "registered"
    if not d.is_dir():
        raise ConfigError("no registered curves found; run the register stage first")
    return load_curves(d, kind="field")


def stage_decompose(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    grid = cfg.grid()
    model_dir = out / "registered_model"
    if cfg.register_model_curves and model_dir.is_dir():
        model = load_curves(model_dir, kind="model")
    else:
        model = _load_model_curves(cfg)
    field = _registered_field_curves(cfg)

    model_coeffs = [wv.dwt(reg.resample_dyadic(c, grid.J, grid.t0, grid.t1)) for c in model]
    field_coeffs = [wv.dwt(reg.resample_dyadic(c, grid.J, grid.t0, grid.t1)) for c in field]
    keep = wv.threshold_union(model_coeffs + field_coeffs,
                              keep_levels=cfg.keep_levels, pct=cfg.pct)

    with open(out / "retained_set.csv", "w", newline="") as fh:
        fh.write("level,position\n")
        for j, p in keep.indices:
            fh.write(f"{j},{p}\n")
    labels = keep.labels()
    _write_matrix_csv(out / "model_coeffs.csv", labels,
                      np.array([wv.restrict(c, keep) for c in model_coeffs]),
                      [c.source_label for c in model_coeffs])
    _write_matrix_csv(out / "field_coeffs.csv", labels,
                      np.array([wv.restrict(c, keep) for c in field_coeffs]),
                      [c.source_label for c in field_coeffs])

    artifacts = {"retained": len(keep), "n_model": len(model), "n_field": len(field)}
    if cfg.new_nominals_mode != "off":
        model_b = load_curves(cfg.path(cfg.model_dir_b), kind="model")
        coeffs_b = [wv.dwt(reg.resample_dyadic(c, grid.J, grid.t0, grid.t1)) for c in model_b]
        # Same retained set as the original system on purpose.
        _write_matrix_csv(out / "b_model_coeffs.csv", labels,
                          np.array([wv.restrict(c, keep) for c in coeffs_b]),
                          [c.source_label for c in coeffs_b])
        artifacts["n_model_b"] = len(model_b)
    return artifacts


def load_retained(cfg: RunConfig) -> wv.RetainedIndexSet:
    path = cfg.out_dir / "retained_set.csv"
    if not path.is_file():
        raise ConfigError("no retained_set.csv; run the decompose stage first")
    idx = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            j, p = line.strip().split(",")
            idx.append((int(j), int(p)))
    return wv.RetainedIndexSet(indices=tuple(idx), J=cfg.grid_J)


def _fit_all(design: np.ndarray, coeffs: np.ndarray, labels: list[str],
             cfg: RunConfig, seed_seq: np.random.SeedSequence) -> list[em.GaspFit]:
    seeds = [int(s.generate_state(1)[0]) for s in seed_seq.spawn(len(labels))]

    def one(i: int) -> em.GaspFit:
        opts = em.FitOptions(seed=seeds[i], n_starts=cfg.fit_n_starts,
                             maxfev_per_param=cfg.fit_maxfev_per_param)
        return em.fit_gasp(design, coeffs[:, i], opts, label=labels[i])

    if cfg.fit_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.fit_workers) as pool:
            return list(pool.map(one, range(len(labels))))
    return [one(i) for i in range(len(labels))]


def stage_fit(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    design = load_design(cfg.path(cfg.design))
    labels, _, model_coeffs = _read_coeff_matrix(out / "model_coeffs.csv")
    if design.K != model_coeffs.shape[0]:
        raise ConfigError(
            f"design has {design.K} rows but {model_coeffs.shape[0]} model curves were decomposed"
        )
    streams = _streams(cfg.seed)
    fits = _fit_all(design.points, model_coeffs, labels, cfg, streams["fit"])
    save_fits(fits, out / "gasp_fits.npz")

    diag_header = (["mu", "lam"]
                   + [f"alpha.{n}" for n in design.column_names]
                   + [f"beta.{n}" for n in design.column_names] + ["loo_rmse"])
    rows = []
    for f in fits:
        _, stud = em.loo_residuals(f)
        rows.append([f.hyper.mu, f.hyper.lam, *f.hyper.alpha, *f.hyper.beta,
                     float(np.sqrt(np.mean(stud ** 2)))])
    _write_matrix_csv(out / "gasp_diag.csv", diag_header, np.array(rows),
                      [f.label for f in fits])

    artifacts = {"n_fits": len(fits),
                 "loo_rmse_max": float(max(r[-1] for r in rows))}
    if cfg.new_nominals_mode != "off":
        design_b = load_design(cfg.path(cfg.design_b))
        labels_b, _, coeffs_b = _read_coeff_matrix(out / "b_model_coeffs.csv")
        fits_b = _fit_all(design_b.points, coeffs_b, labels_b, cfg, streams["fit"].spawn(1)[0])
        save_fits(fits_b, out / "gasp_fits_b.npz")
        artifacts["n_fits_b"] = len(fits_b)
    return artifacts


def _read_coeff_matrix(path):
    if not Path(path).is_file():
        raise ConfigError(f"missing {Path(path).name}; run earlier stages first")
    return _read_matrix_csv(path, with_labels=True)  # cols, labels, (n_curves, n_indices)


def _priors(cfg: RunConfig, keep: wv.RetainedIndexSet) -> cal.PriorSpec:
    iumap = load_iu_map(cfg.path(cfg.iumap))
    return cal.PriorSpec.from_iumap(iumap, keep)


def stage_calibrate(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    keep = load_retained(cfg)
    _, _, field_coeffs = _read_coeff_matrix(out / "field_coeffs.csv")
    summaries = cal.field_summaries(field_coeffs)
    fits = load_fits(out / "gasp_fits.npz")
    priors = _priors(cfg, keep)
    streams = _streams(cfg.seed)

    t_start = time.time()
    draws = cal.run_mcmc(summaries, fits, priors,
                         cal.McmcConfig(n_saved=cfg.n_saved, thin=cfg.thin,
                                        seed=streams["mcmc"]))
    elapsed = time.time() - t_start

    _write_matrix_csv(out / "draws.csv", draws.columns(), draws.to_matrix())
    meta = {
        "seed": cfg.seed, "mcmc_seed": streams["mcmc"], "draws": draws.H,
        "thin": draws.thin, "n_indices": draws.m,
        "accept_tau": draws.accept_tau, "accept_du": draws.accept_du,
        "elapsed_s": round(elapsed, 3),
        "levels": draws.levels.tolist(),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    log.info("mcmc acceptance rates: tau %.3f, inputs %.3f",
             draws.accept_tau, draws.accept_du)
    return meta


def load_draws(cfg: RunConfig) -> cal.PosteriorDraws:
    out = cfg.out_dir
    path = out / "draws.csv"
    if not path.is_file():
        raise ConfigError("no draws.csv; run the calibrate stage first")
    cols, _, mat = _read_matrix_csv(path, with_labels=False)
    meta = json.loads((out / "run_meta.json").read_text())
    keep = load_retained(cfg)
    priors = _priors(cfg, keep)
    nd, nu = priors.n_delta, priors.n_u
    nl = len(meta["levels"])
    m = len(keep)
    pos = 0
    delta = mat[:, pos:pos + nd]; pos += nd
    u = mat[:, pos:pos + nu]; pos += nu
    tau2 = mat[:, pos:pos + nl]; pos += nl
    sigma2 = mat[:, pos:pos + m]; pos += m
    wb = mat[:, pos:pos + m]; pos += m
    wM = mat[:, pos:pos + m]
    return cal.PosteriorDraws(
        wM=wM, wb=wb, delta=delta, u=u, sigma2=sigma2, tau2=tau2,
        levels=np.array(meta["levels"]), index_labels=keep.labels(),
        delta_names=[e.name for e in priors.iumap.variation_entries()],
        u_names=[e.name for e in priors.iumap.calibration_entries()],
        seed=meta["mcmc_seed"], thin=meta["thin"],
        accept_tau=meta["accept_tau"], accept_du=meta["accept_du"],
    )


def stage_predict(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    keep = load_retained(cfg)
    draws = load_draws(cfg)
    fits = load_fits(out / "gasp_fits.npz")
    priors = _priors(cfg, keep)
    grid = cfg.grid()
    streams = _streams(cfg.seed)
    rng = np.random.default_rng(streams["predict"])

    _, bias_band = pred.bias_ensemble(draws, keep, grid.t0, grid.t1,
                                      cfg.alpha, cfg.band_mode)
    reality_ens, reality_band = pred.predict_reality(draws, keep, grid.t0, grid.t1,
                                                     cfg.alpha, cfg.band_mode)
    field_ens, field_band = pred.predict_new_field_run(draws, keep, rng, grid.t0,
                                                       grid.t1, cfg.alpha, cfg.band_mode)
    pure = pred.pure_model_prediction(draws, fits, priors, keep, grid.t0, grid.t1)

    write_band(bias_band, out / "bias_band.csv")
    write_band(reality_band, out / "reality_band.csv")
    write_band(field_band, out / "field_band.csv")
    _write_grid_curve(pure, out / "pure_model.csv")
    if cfg.emit_ensembles:
        for name, ens in (("reality", reality_ens), ("field", field_ens)):
            _write_matrix_csv(out / f"{name}_ensemble.csv",
                              [FLOAT_FMT % t for t in reality_ens.times()], ens.ys)
    return {"alpha": cfg.alpha, "band_mode": cfg.band_mode,
            "bands": ["bias_band.csv", "reality_band.csv", "field_band.csv"],
            "pure_model": "pure_model.csv"}


def stage_extrapolate(cfg: RunConfig) -> dict:
    out = cfg.out_dir
    keep = load_retained(cfg)
    draws = load_draws(cfg)
    priors = _priors(cfg, keep)
    grid = cfg.grid()
    streams = _streams(cfg.seed)
    seq_same, seq_nominals = streams["extrapolate"].spawn(2)
    artifacts = {}

    if cfg.extrapolate_same_type:
        fits = load_fits(out / "gasp_fits.npz")
        rng = np.random.default_rng(seq_same)
        _, band = pred.extrapolate_same_type(draws, fits, priors, keep, rng,
                                             grid.t0, grid.t1, cfg.alpha, cfg.band_mode)
        write_band(band, out / "same_type_band.csv")
        artifacts["same_type"] = "same_type_band.csv"

    if cfg.new_nominals_mode != "off":
        fits_b = load_fits(out / "gasp_fits_b.npz")
        modes = (["additive", "multiplicative"] if cfg.new_nominals_mode == "both"
                 else [cfg.new_nominals_mode])
        fallbacks = {}
        for mode in modes:
            # Same stream for both modes: the comparison is then paired.
            mode_rng = np.random.default_rng(seq_nominals)
            ens, band = pred.extrapolate_new_nominals(draws, fits_b, priors, keep,
                                                      mode, mode_rng, grid.t0, grid.t1,
                                                      alpha=cfg.alpha,
                                                      band_mode=cfg.band_mode)
            write_band(band, out / f"condition_b_{mode}_band.csv")
            artifacts[f"condition_b_{mode}"] = f"condition_b_{mode}_band.csv"
            fallbacks[mode] = ens.guard_fallbacks
        artifacts["guard_fallbacks"] = fallbacks

    if cfg.delta_shift_run:
        reality_ens, reality_band = pred.predict_reality(draws, keep, grid.t0, grid.t1,
                                                         cfg.alpha, cfg.band_mode)
        shifted = load_curve(cfg.path(cfg.delta_shift_run))
        if cfg.nominal_run:
            nominal = load_curve(cfg.path(cfg.nominal_run))
        else:
            fits = load_fits(out / "gasp_fits.npz")
            nominal = pred.pure_model_prediction(
                draws, fits, priors, keep, grid.t0, grid.t1).to_curve()
        _, band = pred.extrapolate_delta_shift((reality_ens, reality_band),
                                               shifted, nominal)
        write_band(band, out / "delta_shift_band.csv")
        artifacts["delta_shift"] = "delta_shift_band.csv"
    return artifacts


STAGE_FUNCS = {
    "register": stage_register,
    "decompose": stage_decompose,
    "fit": stage_fit,
    "calibrate": stage_calibrate,
    "predict": stage_predict,
    "extrapolate": stage_extrapolate,
}


def run_stage(cfg: RunConfig, stage: str) -> dict:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return STAGE_FUNCS[stage](cfg)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage in order and write the manifest."""
    cfg.validate_paths()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": cfg.seed, "stages": {}}
    t0 = time.time()
    for stage in STAGES:
        if stage == "extrapolate" and not (cfg.extrapolate_same_type
                                           or cfg.new_nominals_mode != "off"
                                           or cfg.delta_shift_run):
            continue
        log.info("stage %s ...", stage)
        manifest["stages"][stage] = run_stage(cfg, stage)
    meta = json.loads((cfg.out_dir / "run_meta.json").read_text())
    design = load_design(cfg.path(cfg.design))
    manifest["counts"] = {
        "K": design.K, "d": design.d,
        "n_rep": manifest["stages"]["decompose"]["n_field"],
        "H": meta["draws"], "thin": meta["thin"],
        "retained": manifest["stages"]["decompose"]["retained"],
    }
    manifest["accept_tau"] = meta["accept_tau"]
    manifest["accept_du"] = meta["accept_du"]
    manifest["elapsed_s"] = round(time.time() - t0, 3)
    (cfg.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest
