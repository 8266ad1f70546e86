"""Command-line driver: analytic sweeps, simulation, filtering and reconstruction.

Every stage reads one TOML configuration (see :mod:`optotomo.config`) and
writes delimited text into the configured output directory::

    out/
      manifest.json          configuration, hashes, time-unit conversion
      analytic.csv           sweep table (``analytic``)
      rep000/records/*.npz   simulated currents (``simulate`` with sampler "sde")
      rep000/povm.csv        one Gaussian POVM element per trial
      rep000/rho.csv         reconstructed density matrix
      rep000/wigner.csv      its Wigner function
      rep000/iterations.csv  likelihood and step size per iteration
      report.json            fidelity mean and spread over repetitions

Exit codes: 0 success, 1 validation disagreement, 2 configuration error,
3 numerical failure or invalid POVM, 4 truncation, 5 mixed artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytic
from .config import ExperimentConfig, load_config
from .errors import ContractError, InvalidPovmError, NumericalError, ParameterError, TruncationError
from .filtering import load_povm_csv, povm_element, save_povm_csv
from .maxlik import ReconstructionConfig, choose_dim, povm_operators, reconstruct
from .model import ProtocolSchedule, Regime, thresholds, uniform_phases
from .sampling import CoherentSuperposition, sample_elements
from .sim import MeasurementRecord, default_dt, simulate_ensemble, trial_seed
from .states import cat_state, coherent_state, fidelity, fock_state, save_density_text, wigner

log = logging.getLogger("optotomo")

EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TRUNCATION = 4
EXIT_CONTRACT = 5

PROTOCOLS = ("one_step", "two_step")


# ---------------------------------------------------------------------------
# shared helpers


def rep_dir(cfg: ExperimentConfig, rep: int) -> Path:
    return Path(cfg.output_dir) / f"rep{rep:03d}"


def rep_seed(cfg: ExperimentConfig, rep: int) -> int:
    return trial_seed(cfg.run.base_seed, rep)


def header_lines(cfg: ExperimentConfig):
    return [f"config_hash={cfg.data_hash()}", f"tool_version={__version__}"]


def schedule_for(cfg: ExperimentConfig, params=None):
    """Absolute-time schedule of the configuration and the conversion applied."""
    s = cfg.schedule
    return analytic.resolve_schedule(params or cfg.params, s.tau, s.T, s.maintain_squeezing, s.time_units)


def trial_schedules(cfg: ExperimentConfig):
    base, _ = schedule_for(cfg)
    return [base.with_(squeeze_phase=phi) for phi in uniform_phases(cfg.run.n_phases)]


def truth_state(cfg: ExperimentConfig, dim=None):
    t = cfg.truth
    if t.kind == "coherent":
        return coherent_state(t.alpha, dim)
    if t.kind == "cat":
        return cat_state(t.alpha, dim)
    return fock_state(t.n, dim)


def truth_sampler(cfg: ExperimentConfig):
    """Exact superposition for coherent and cat truths, Fock vector otherwise."""
    t = cfg.truth
    if t.kind == "coherent":
        return CoherentSuperposition.coherent(t.alpha)
    if t.kind == "cat":
        return CoherentSuperposition.cat(t.alpha)
    return truth_state(cfg)


def truncation_dim(cfg: ExperimentConfig, loss=None):
    """Smallest basis holding all but ``loss`` of the truth state's norm."""
    loss = cfg.reconstruct.truncation_loss if loss is None else loss
    t = cfg.truth
    big = t.n + 2 if t.kind == "fock" else int(4 * abs(t.alpha) ** 2 + 60)
    amps = truth_state(cfg, big).amplitudes
    kept = np.cumsum(np.abs(amps) ** 2)
    return int(np.argmax(kept > 1.0 - loss)) + 1


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def update_manifest(cfg: ExperimentConfig, stage: str, outputs):
    path = Path(cfg.output_dir) / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    if manifest and manifest.get("config_hash") != cfg.config_hash():
        log.info("manifest belonged to config %s; starting a new one", manifest.get("config_hash"))
        manifest = {}
    _, conversion = schedule_for(cfg)
    manifest.update({
        "config": cfg.to_mapping(),
        "config_hash": cfg.config_hash(),
        "data_hash": cfg.data_hash(),
        "tool_version": __version__,
        "time_conversion": {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in conversion.items()},
    })
    manifest.setdefault("stages", {})[stage] = sorted(str(p) for p in outputs)
    write_json(path, manifest)


# ---------------------------------------------------------------------------
# analytic


def _safe(func, *args):
    try:
        return float(func(*args))
    except ParameterError:
        return math.nan


def analytic_table(cfg: ExperimentConfig):
    """Rows of the analytic sweep, one per sweep value.

    Columns hold the thresholds, both effective heterodyne efficiencies and
    ``sigma2_X``, ``sigma2_Y`` and ``eta_hom`` of the four regime/protocol
    combinations.  Undefined entries are NaN, divergent ones infinite.
    """
    sweep = cfg.analytic
    rows = []
    for value in np.linspace(sweep.start, sweep.stop, sweep.num):
        row = {sweep.axis: float(value)}
        for regime in Regime:
            params = cfg.params.with_(**{sweep.axis: float(value), "regime": regime})
            tag = "zero" if regime is Regime.ZERO_DETUNED else "blue"
            two_step, _ = schedule_for(cfg, params)
            eta_fn = analytic.eta_het_zero if regime is Regime.ZERO_DETUNED else analytic.eta_het_blue
            eh = _safe(eta_fn, params, two_step.T)
            row[f"eta_het_{tag}"] = eh
            if tag == "zero":
                row["chi_osc"] = params.gamma
                row["chi_het"] = 2.0 * params.gamma * (1.0 + params.n_th)
            try:
                row[f"chi_del_{tag}"] = thresholds(params, eh).chi_del if 0 < eh <= 1 else math.nan
            except ParameterError:
                row[f"chi_del_{tag}"] = math.nan
            one_step = ProtocolSchedule(0.0, two_step.T, True)
            for name, sched in zip(PROTOCOLS, (one_step, two_step)):
                try:
                    st = analytic.estimate_stats(params, sched)
                    sx, sy, eh_ = st.sigma2_X, st.sigma2_Y, st.eta_hom
                except ParameterError:
                    sx = sy = eh_ = math.nan
                row[f"sigma2_X_{tag}_{name}"] = sx
                row[f"sigma2_Y_{tag}_{name}"] = sy
                row[f"eta_hom_{tag}_{name}"] = eh_
        rows.append(row)
    return rows


def cmd_analytic(cfg: ExperimentConfig, args=None):
    rows = analytic_table(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "analytic.csv"
    with open(path, "w", newline="") as fh:
        for line in header_lines(cfg):
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) for k, v in row.items()})
    undefined = sum(math.isnan(v) for row in rows for v in row.values())
    if undefined:
        log.info("%d undefined table entries (e.g. mu = 0 or chi at or below gamma) written as nan", undefined)
    update_manifest(cfg, "analytic", [path])
    log.info("wrote %s (%d rows)", path, len(rows))
    return path


# ---------------------------------------------------------------------------
# simulate / filter


def _log_conversion(cfg):
    _, conv = schedule_for(cfg)
    log.info("time units %s: tau -> %.6g (unit %.6g), T -> %.6g (unit %.6g)",
             conv["units"], conv["tau"], conv["tau_unit"], conv["T"], conv["T_unit"])


def sample_povm_elements(cfg: ExperimentConfig, rep: int):
    """POVM-sampler elements of repetition ``rep`` (no current simulation)."""
    schedules = trial_schedules(cfg)
    stats = analytic.estimate_stats(cfg.params, schedules[0])
    if not (math.isfinite(stats.sigma2_X) and math.isfinite(stats.sigma2_Y)):
        raise InvalidPovmError("the protocol gathers no information (infinite estimate variance)")
    angles = [schedules[k % len(schedules)].frame_angle for k in range(cfg.run.n_trials)]
    rng = np.random.default_rng(rep_seed(cfg, rep))
    return sample_elements(truth_sampler(cfg), stats, angles, rng)


def simulate_records(cfg: ExperimentConfig, rep: int, workers=None):
    schedules = trial_schedules(cfg)
    dt = cfg.run.dt or default_dt(cfg.params)
    return simulate_ensemble(truth_state(cfg), cfg.params, schedules, dt=dt, n_trials=cfg.run.n_trials,
                             base_seed=rep_seed(cfg, rep), workers=workers)


def cmd_simulate(cfg: ExperimentConfig, args=None):
    _log_conversion(cfg)
    outputs = []
    for rep in range(cfg.run.repetitions):
        d = rep_dir(cfg, rep)
        d.mkdir(parents=True, exist_ok=True)
        if cfg.run.sampler == "povm":
            elements = sample_povm_elements(cfg, rep)
            path = d / "povm.csv"
            save_povm_csv(elements, path, config_hash=cfg.data_hash(), version=__version__)
            outputs.append(path)
            log.info("rep %d: sampled %d POVM elements -> %s", rep, len(elements), path)
            continue
        records = simulate_records(cfg, rep)
        rdir = d / "records"
        rdir.mkdir(exist_ok=True)
        for k, rec in enumerate(records):
            rec.diagnostics["config_hash"] = cfg.data_hash()
            rec.diagnostics["trial"] = k
            path = rdir / f"trial{k:06d}.npz"
            rec.save(path)
            outputs.append(path)
        log.info("rep %d: simulated %d trajectories -> %s", rep, len(records), rdir)
    update_manifest(cfg, "simulate", outputs)
    return outputs


def filter_record_files(cfg: ExperimentConfig, rep: int):
    files = sorted((rep_dir(cfg, rep) / "records").glob("trial*.npz"))
    if len(files) != cfg.run.n_trials:
        raise ContractError(f"rep {rep}: expected {cfg.run.n_trials} records, found {len(files)}")
    elements = []
    for path in files:
        rec = MeasurementRecord.load(path)
        got = rec.diagnostics.get("config_hash")
        if got != cfg.data_hash():
            raise ContractError(f"{path}: produced under config {got}, current is {cfg.data_hash()}")
        elements.append(povm_element(rec, trial=int(rec.diagnostics["trial"])))
    return elements


def cmd_filter(cfg: ExperimentConfig, args=None):
    if cfg.run.sampler == "povm":
        log.info("sampler 'povm' produces POVM elements directly; nothing to filter")
        return []
    outputs = []
    for rep in range(cfg.run.repetitions):
        elements = filter_record_files(cfg, rep)
        path = rep_dir(cfg, rep) / "povm.csv"
        save_povm_csv(elements, path, config_hash=cfg.data_hash(), version=__version__)
        outputs.append(path)
        log.info("rep %d: filtered %d records -> %s", rep, len(elements), path)
    update_manifest(cfg, "filter", outputs)
    return outputs


# ---------------------------------------------------------------------------
# reconstruct


def reconstruction_dim(cfg: ExperimentConfig, elements):
    if cfg.reconstruct.dim:
        return cfg.reconstruct.dim
    return max(truncation_dim(cfg), choose_dim(elements))


def reconstruct_rep(cfg: ExperimentConfig, rep: int):
    """Reconstruct one repetition from its POVM file and write its tables."""
    d = rep_dir(cfg, rep)
    elements, _ = load_povm_csv(d / "povm.csv", expect_hash=cfg.data_hash())
    dim = reconstruction_dim(cfg, elements)
    rc = cfg.reconstruct
    config = ReconstructionConfig(dim=dim, tol=rc.tol, max_iter=rc.max_iter, dilution=rc.dilution)
    rho, diag = reconstruct(povm_operators(elements, dim), config)
    head = header_lines(cfg)
    save_density_text(rho, d / "rho.csv", head)
    xs = np.linspace(-cfg.wigner.half_width, cfg.wigner.half_width, cfg.wigner.points)
    grid = wigner(rho, xs)
    grid.save_text(d / "wigner.csv", head)
    np.savetxt(d / "iterations.csv", np.array(diag.rows(), dtype=float), delimiter=",", fmt="%.17g",
               header="\n".join(head + ["iteration,log_likelihood,trace_distance_step,dilution"]))
    result = {
        "rep": rep,
        "dim": dim,
        "fidelity": fidelity(rho, truth_state(cfg, dim + 40)),
        "wigner_min": grid.minimum,
        "iterations": diag.iterations,
        "converged": diag.converged,
        "log_likelihood": diag.log_likelihood[-1],
        "floored_probabilities": diag.floored,
    }
    if not diag.converged:
        log.warning("rep %d: no convergence within %d iterations", rep, rc.max_iter)
    return rho, result


def summarize(results):
    fids = np.array([r["fidelity"] for r in results])
    wmin = np.array([r["wigner_min"] for r in results])
    return {
        "fidelity_mean": float(fids.mean()),
        "fidelity_std": float(fids.std(ddof=1)) if fids.size > 1 else 0.0,
        "wigner_min_mean": float(wmin.mean()),
        "repetitions": results,
    }


def cmd_reconstruct(cfg: ExperimentConfig, args=None):
    results = []
    outputs = []
    for rep in range(cfg.run.repetitions):
        _, res = reconstruct_rep(cfg, rep)
        results.append(res)
        outputs += [rep_dir(cfg, rep) / name for name in ("rho.csv", "wigner.csv", "iterations.csv")]
        log.info("rep %d: dim %d, fidelity %.4f, min W %.4g, %d iterations",
                 rep, res["dim"], res["fidelity"], res["wigner_min"], res["iterations"])
    report = summarize(results)
    report.update(config_hash=cfg.data_hash(), tool_version=__version__)
    path = Path(cfg.output_dir) / "report.json"
    write_json(path, report)
    update_manifest(cfg, "reconstruct", outputs + [path])
    log.info("fidelity %.4f +- %.4f over %d repetitions", report["fidelity_mean"], report["fidelity_std"],
             len(results))
    return report


def cmd_pipeline(cfg: ExperimentConfig, args=None):
    report = None
    for stage in cfg.run.stages:
        result = STAGE_COMMANDS[stage](cfg, args)
        if stage == "reconstruct":
            report = result
    return report


STAGE_COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "reconstruct": cmd_reconstruct}


# ---------------------------------------------------------------------------
# validate


def _moment_z(a, b):
    """z-scores of the difference in mean and in variance of two samples."""
    def stats(x):
        n = x.size
        m = x.mean()
        v = x.var(ddof=1)
        m4 = np.mean((x - m) ** 4)
        return m, v, v / n, max(m4 - v * v, 0.0) / n
    ma, va, sma, sva = stats(a)
    mb, vb, smb, svb = stats(b)
    return (ma - mb) / math.sqrt(sma + smb), (va - vb) / math.sqrt(sva + svb)


def validate_samplers(cfg: ExperimentConfig, n_trials=None, workers=None, z_max=4.0):
    """Compare SDE-filtered estimates with POVM-sampler draws at matched settings.

    Returns a dict with z-scores of the pooled trial-frame means and variances
    of ``x_est`` and ``y_est`` and an overall ``passed`` flag.
    """
    n = n_trials or cfg.run.n_trials
    run = cfg.run.__class__(**{**cfg.run.__dict__, "n_trials": n})
    small = ExperimentConfig(**{**cfg.__dict__, "run": run})
    sde = [povm_element(rec, trial=k) for k, rec in enumerate(simulate_records(small, 0, workers))]
    povm = sample_povm_elements(small, 1)
    out = {"n_trials": n}
    for key in ("x_est", "y_est"):
        a = np.array([getattr(e, key) for e in sde])
        b = np.array([getattr(e, key) for e in povm])
        zm, zv = _moment_z(a, b)
        out[f"{key}_mean_z"] = zm
        out[f"{key}_var_z"] = zv
    out["z_max"] = z_max
    out["passed"] = all(abs(v) <= z_max for k, v in out.items() if k.endswith("_z"))
    return out


def cmd_validate(cfg: ExperimentConfig, args=None):
    result = validate_samplers(cfg, n_trials=getattr(args, "trials", None))
    result.update(config_hash=cfg.data_hash(), tool_version=__version__)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "validate.json", result)
    for k, v in result.items():
        if k.endswith("_z"):
            log.info("%s = %+.2f", k, v)
    if not result["passed"]:
        log.error("SDE and POVM samplers disagree beyond |z| = %g", result["z_max"])
        return EXIT_VALIDATION
    return 0


# ---------------------------------------------------------------------------
# gnuplot


GNUPLOT_ANALYTIC = """\
# sigma_Y^2 of the four regime/protocol combinations against {axis}
set datafile separator comma
set datafile commentschars "#"
set key autotitle columnhead
set xlabel "{axis}"
set ylabel "sigma_Y^2"
set yrange [0.4:2]
set logscale x
plot "{path}" using "{axis}":"sigma2_Y_zero_one_step" with lines dt 2, \\
     "" using "{axis}":"sigma2_Y_zero_two_step" with lines, \\
     "" using "{axis}":"sigma2_Y_blue_one_step" with lines dt 2, \\
     "" using "{axis}":"sigma2_Y_blue_two_step" with lines, \\
     0.5 title "homodyne limit" dt 3
"""

GNUPLOT_WIGNER = """\
# Wigner function of the reconstructed state
set datafile separator comma
set view map
set size ratio -1
set xlabel "X"
set ylabel "Y"
set palette defined (-1 "blue", 0 "white", 1 "red")
set cbrange [-1/pi:1/pi]
plot "{path}" nonuniform matrix with image notitle
"""


def cmd_gnuplot(cfg: ExperimentConfig, args=None):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scripts = []
    path = out / "analytic.gp"
    path.write_text(GNUPLOT_ANALYTIC.format(axis=cfg.analytic.axis, path="analytic.csv"))
    scripts.append(path)
    for rep in range(cfg.run.repetitions):
        path = rep_dir(cfg, rep) / "wigner.gp"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(GNUPLOT_WIGNER.format(path="wigner.csv"))
        scripts.append(path)
    for p in scripts:
        log.info("wrote %s", p)
    return scripts


# ---------------------------------------------------------------------------
# entry point


COMMANDS = {
    "analytic": (cmd_analytic, "tabulate closed-form estimate variances over a chi or mu sweep"),
    "simulate": (cmd_simulate, "simulate trials (SDE records or POVM-sampler elements)"),
    "filter": (cmd_filter, "turn simulated records into POVM elements"),
    "reconstruct": (cmd_reconstruct, "maximum-likelihood reconstruction and fidelity report"),
    "pipeline": (cmd_pipeline, "run the stages listed in run.stages"),
    "validate": (cmd_validate, "cross-check the SDE path against the POVM sampler"),
    "gnuplot": (cmd_gnuplot, "write gnuplot scripts for the output tables"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="optotomo", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="TOML experiment configuration")
        p.add_argument("-o", "--output-dir", help="override output_dir from the configuration")
        if name == "validate":
            p.add_argument("--trials", type=int, help="trials per sampler (default run.n_trials)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config)
        if args.output_dir:
            cfg = ExperimentConfig(**{**cfg.__dict__, "output_dir": args.output_dir})
        func, _ = COMMANDS[args.command]
        result = func(cfg, args)
    except ParameterError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except TruncationError as exc:
        extra = f" (needs dim {exc.needed_dim})" if exc.needed_dim else ""
        log.error("truncation: %s%s", exc, extra)
        return EXIT_TRUNCATION
    except ContractError as exc:
        log.error("incompatible artifacts: %s", exc)
        return EXIT_CONTRACT
    except (NumericalError, InvalidPovmError) as exc:
        log.error("numerical: %s", exc)
        return EXIT_NUMERICAL
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
