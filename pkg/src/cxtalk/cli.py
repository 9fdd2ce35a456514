"""Command-line front end: simulate, montecarlo, fit, correct, sweep-threshold.

Configuration is a TOML file with the sections listed in ``DEFAULTS``;
every key is optional and a bare file runs the nominal scenario.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib as tomli
except ImportError:  # python < 3.11
    import tomli

from . import __version__
from .analysis import (apply_correction, build_reference, central_peak_ratio, corrected_ratio_error, fit_gaussian_dip,
                       fit_peaks, reference_from_spectrum)
from .crosstalk import (SpectrumFormatError, crosstalk_spectrum, default_grid, dip_depth, load_spectrum_csv,
                        loss_multiplier_curve, peak_maxima, save_spectrum_csv, spectrum_no_crosstalk,
                        write_sidecar)
from .discriminator import DiscriminatorConfig, PulseHeightDistribution, loss_fraction_F, save_sweep_csv
from .montecarlo import (McConfig, analytic_loss_fractions, central_bin_dip, dip_profile, joint_loss_check,
                         matched_dip, run)
from .source import SourceParams, TemporalModel
from .waveform import Trace, WaveformPair, load_trace_csv, synth_crosstalk, synth_signal

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

DEFAULTS = {
    "source": {"mode": "continuous", "lam": 0.01, "tau0": 11.8, "eps_a": 0.1, "eps_b": 0.1,
               "n_pulses": 1_000_000, "rate": 1e5, "sigma": 1.41,
               "stop_peak_indices": [-3, -2, -1, 0, 1, 2, 3], "background": 1.0},
    "waveform": {"amplitude": 1.0, "rise": 1.0, "fall": 2.0, "crosstalk_mode": "inverted-copy",
                 "t0": -50.0, "dt": 0.05, "n": 2001, "trace_a": "", "trace_b": ""},
    "discriminator": {"v_th": 0.15, "k_a": 0.012, "k_b": 0.013,
                      "phd_a": {"family": "gamma", "shape": 2.0, "scale": 0.068},
                      "phd_b": {"family": "gamma", "shape": 2.0, "scale": 0.078}},
    "crosstalk": {"variant": "anchored", "f_a": "auto", "f_b": "auto", "bin_width": 0.1,
                  "min_half_span": 42.0},
    "montecarlo": {"seed": 20240901, "events": 1_000_000, "bin_width": 0.1, "tac_window": 42.0,
                   "pair_mode": "first-hit", "threads": 0, "waveform_sum": False},
    "analysis": {"weighted": False, "reference_mode": "fit"},
    "io": {"out": "out"},
}

# free-form tables whose keys depend on the chosen family
_OPEN_TABLES = {("discriminator", "phd_a"), ("discriminator", "phd_b")}


class ConfigError(ValueError):
    """Bad configuration; carries a line-level diagnostic."""


class UsageError(ValueError):
    pass


def _line_of(text, key):
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for n, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return n
    return None


def _merge(base, user, text, path, where=()):
    for key, val in user.items():
        here = where + (key,)
        dotted = ".".join(here)
        if key not in base:
            line = _line_of(text, key) or _line_of(text, f"[{dotted}]")
            loc = f"{path}:{line}" if line else str(path)
            raise ConfigError(f"{loc}: unknown key '{dotted}'")
        ref = base[key]
        if here in _OPEN_TABLES:
            if not isinstance(val, dict):
                raise ConfigError(f"{path}: '{dotted}' must be a table")
            base[key] = dict(val)
        elif isinstance(ref, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}: '{dotted}' must be a table")
            _merge(ref, val, text, path, here)
        else:
            base[key] = _coerce(ref, val, dotted, text, path, key)


def _coerce(ref, val, dotted, text, path, key):
    ok = (isinstance(ref, bool) and isinstance(val, bool)) or \
         (isinstance(ref, (int, float)) and not isinstance(ref, bool) and isinstance(val, (int, float))
          and not isinstance(val, bool)) or \
         (isinstance(ref, str) and (isinstance(val, str) or (ref == "auto" and isinstance(val, (int, float))))) or \
         (isinstance(ref, list) and isinstance(val, list))
    if not ok:
        line = _line_of(text, key)
        loc = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{loc}: '{dotted}' has the wrong type ({type(val).__name__})")
    if isinstance(ref, float) and isinstance(val, int):
        return float(val)
    if isinstance(ref, int) and not isinstance(ref, bool) and isinstance(val, float):
        if val != int(val):
            raise ConfigError(f"{path}: '{dotted}' must be an integer")
        return int(val)
    return val


def load_config(path=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        user = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    _merge(cfg, user, text, path)
    return cfg


def dump_config(cfg) -> str:
    return tomli_w.dumps(cfg)


def config_hash(cfg) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:12]


def _header(cfg, extra=""):
    return f"cxtalk {__version__} config={config_hash(cfg)}{(' ' + extra) if extra else ''}"


# -- building domain objects from a config ----------------------------------

def build_source(cfg):
    s = cfg["source"]
    try:
        src = SourceParams(lam=s["lam"], tau0=s["tau0"], eps_a=s["eps_a"], eps_b=s["eps_b"],
                           n_pulses=s["n_pulses"], rate=s["rate"])
        tm = TemporalModel(s["sigma"], tuple(s["stop_peak_indices"]))
    except ValueError as exc:
        raise ConfigError(f"source: {exc}") from None
    return src, tm


def build_pairs(cfg):
    w, d = cfg["waveform"], cfg["discriminator"]
    pairs = []
    for tag, k in (("a", d["k_a"]), ("b", d["k_b"])):
        try:
            if w[f"trace_{tag}"]:
                sig = load_trace_csv(w[f"trace_{tag}"])
            else:
                sig = synth_signal(w["amplitude"], w["rise"], w["fall"], t0=w["t0"], dt=w["dt"], n=w["n"])
            pairs.append(WaveformPair(sig, synth_crosstalk(sig, k, w["crosstalk_mode"]), k))
        except (ValueError, OSError) as exc:
            raise ConfigError(f"waveform: {exc}") from None
    return pairs


def build_discriminator(cfg):
    d = cfg["discriminator"]
    try:
        disc = DiscriminatorConfig(d["v_th"], d["k_a"], d["k_b"])
        return disc, PulseHeightDistribution.from_spec(d["phd_a"]), PulseHeightDistribution.from_spec(d["phd_b"])
    except (ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"discriminator: {exc}") from None


def loss_fractions(cfg, disc=None, phd_a=None, phd_b=None):
    c = cfg["crosstalk"]
    if disc is None:
        disc, phd_a, phd_b = build_discriminator(cfg)
    f_a = loss_fraction_F(phd_a, phd_b, disc.k_b, disc.v_th) if c["f_a"] == "auto" else float(c["f_a"])
    f_b = loss_fraction_F(phd_b, phd_a, disc.k_a, disc.v_th) if c["f_b"] == "auto" else float(c["f_b"])
    return f_a, f_b


def build_mc_config(cfg, seed=None, events=None) -> McConfig:
    src, tm = build_source(cfg)
    pa, pb = build_pairs(cfg)
    disc, phd_a, phd_b = build_discriminator(cfg)
    m = cfg["montecarlo"]
    mc = McConfig(seed=m["seed"] if seed is None else seed, n_events=m["events"] if events is None else events,
                  mode=cfg["source"]["mode"], source=src, temporal=tm, pair_a=pa, pair_b=pb,
                  phd_a=phd_a, phd_b=phd_b, disc=disc, bin_width=m["bin_width"], tac_window=m["tac_window"],
                  pair_mode=m["pair_mode"], waveform_sum=m["waveform_sum"],
                  workers=m["threads"] or None)
    try:
        mc.validate()
    except ValueError as exc:
        raise ConfigError(f"montecarlo: {exc}") from None
    return mc


# -- subcommands ------------------------------------------------------------

def _outdir(args, cfg):
    out = Path(args.out or cfg["io"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, cfg):
    if args.mode:
        cfg["source"]["mode"] = args.mode
    if args.variant:
        cfg["crosstalk"]["variant"] = args.variant
    mode, variant = cfg["source"]["mode"], cfg["crosstalk"]["variant"]
    if mode not in ("continuous", "pulsed"):
        raise ConfigError(f"source.mode must be 'continuous' or 'pulsed', got {mode!r}")
    if variant not in ("anchored", "literal"):
        raise ConfigError(f"crosstalk.variant must be 'anchored' or 'literal', got {variant!r}")
    src, tm = build_source(cfg)
    pa, pb = build_pairs(cfg)
    f_a, f_b = loss_fractions(cfg)
    c = cfg["crosstalk"]
    grid = default_grid(tm, src.tau0, c["bin_width"], c["min_half_span"])
    base = spectrum_no_crosstalk(src, tm, grid, mode=mode, background=cfg["source"]["background"])
    ma = loss_multiplier_curve(pa, pb, f_a, grid, variant, "A")
    mb = loss_multiplier_curve(pb, pa, f_b, grid, variant, "B")
    from .crosstalk import spectrum_with_crosstalk
    spec = spectrum_with_crosstalk(base, ma, mb)
    out = _outdir(args, cfg)
    hdr = _header(cfg)
    save_spectrum_csv(base, out / "base_spectrum.csv", hdr)
    write_sidecar(out / "base_spectrum.csv", {"header": hdr, "metadata": base.metadata})
    save_spectrum_csv(spec, out / "crosstalk_spectrum.csv", hdr)
    write_sidecar(out / "crosstalk_spectrum.csv", {"header": hdr, "metadata": spec.metadata})
    j0 = int(np.argmin(np.abs(grid)))
    wa0, wb0 = float(ma.overlap[j0]), float(mb.overlap[j0])
    report = {"mode": mode, "variant": variant, "F_A": f_a, "F_B": f_b,
              "dip_depth": dip_depth(spec, mode=mode),
              "product_identity": 1 - (1 - f_a * wa0) * (1 - f_b * wb0),
              "overlap_A_at_0": wa0, "overlap_B_at_0": wb0}
    if mode == "pulsed":
        report["peak_centers_ns"] = [i * src.tau0 for i in tm.stop_peak_indices]
    text = "".join(f"{k}: {v}\n" for k, v in report.items())
    (out / "dip_report.txt").write_text(f"# {hdr}\n" + text)
    write_sidecar(out / "dip_report.txt", {"header": hdr, "report": report})
    print(text, end="")
    return EXIT_OK


def cmd_montecarlo(args, cfg):
    if args.events is not None and args.events < 1:
        raise UsageError("--events must be >= 1")
    mc = build_mc_config(cfg, seed=args.seed, events=args.events)
    res = run(mc)
    out = _outdir(args, cfg)
    hdr = _header(cfg, f"seed={mc.seed} events={mc.n_events}")
    save_spectrum_csv(res.spectrum, out / "mc_spectrum.csv", hdr)
    write_sidecar(out / "mc_spectrum.csv", {"header": hdr, "metadata": res.spectrum.metadata, "totals": res.totals})
    f_a, f_b = analytic_loss_fractions(mc)
    pred = 1 - (1 - f_a) * (1 - f_b)
    rows = [("analytic F_A", f_a, None), ("analytic F_B", f_b, None), ("predicted dip", pred, None)]
    if mc.mode == "continuous":
        g = dip_profile(mc, res.spectrum.tau, f_a, f_b)
        g0 = g[int(np.argmin(np.abs(res.spectrum.tau)))]
        d, e = matched_dip(res.spectrum, g / g0) if g0 > 0 else (0.0, float("nan"))
        rows.append(("MC dip (profile fit)", d, e))
        rows.append(("MC dip (central bin)", *central_bin_dip(res.spectrum)))
    else:
        centers = [i * mc.source.tau0 for i in mc.temporal.stop_peak_indices]
        r, e = central_peak_ratio(fit_peaks(res.spectrum, centers), centers)
        rows.append(("MC dip (peak fits)", 1 - r, e))
    jl = joint_loss_check(mc, n=min(10**6, 10 * mc.n_events))
    lines = [f"{'quantity':<24}{'value':>14}{'sigma':>12}{'dist/sigma':>12}"]
    for name, v, e in rows:
        if e is None:
            lines.append(f"{name:<24}{v:>14.6g}{'':>12}{'':>12}")
        else:
            dist = abs(v - pred) / e if e > 0 else float("inf")
            lines.append(f"{name:<24}{v:>14.6g}{e:>12.3g}{dist:>12.2f}")
    lines.append(f"{'joint-vs-product gap':<24}{jl['discrepancy']:>14.3g}")
    table = "\n".join(lines) + "\n"
    (out / "mc_comparison.txt").write_text(f"# {hdr}\n" + table)
    print(table, end="")
    print("".join(f"{k}: {v}\n" for k, v in res.totals.items()), end="")
    return EXIT_OK


def _peak_centers(args):
    return [i * args.tau0 for i in _parse_indices(args.peaks)]


def _parse_indices(text):
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", text)
    if m:
        return list(range(int(m.group(1)), int(m.group(2)) + 1))
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse peak indices {text!r}; use e.g. -3..3 or -1,0,1") from None


def cmd_fit(args, cfg):
    spec = load_spectrum_csv(args.inp)
    out = _outdir(args, cfg)
    weighted = args.weighted or cfg["analysis"]["weighted"]
    hdr = _header(cfg, f"input={Path(args.inp).name}")
    if args.kind == "dip":
        fit = fit_gaussian_dip(spec, weighted=weighted)
        text = fit.to_text()
        payload = fit.to_dict()
    else:
        centers = _peak_centers(args)
        fits = fit_peaks(spec, centers, weighted=weighted)
        ratio, err = central_peak_ratio(fits, centers)
        text = "".join(f"[peak {c:g} ns]\n{f.to_text()}" for c, f in zip(centers, fits))
        text += f"central_ratio: {ratio:.6g} +- {err:.3g}\n"
        payload = {"peaks": [dict(center_ns=c, **f.to_dict()) for c, f in zip(centers, fits)],
                   "central_ratio": ratio, "central_ratio_error": err}
    (out / "fit.txt").write_text(f"# {hdr}\n" + text)
    write_sidecar(out / "fit.txt", {"header": hdr, "fit": payload})
    print(text, end="")
    return EXIT_OK


def _side_ratio(spec, centers_idx, tau0):
    peaks = peak_maxima(spec, tau0, centers_idx)
    side = [v for i, v in peaks.items() if i != 0]
    if 0 not in peaks or not side:
        raise UsageError("spectrum needs a central and at least one non-central peak")
    return peaks[0] / float(np.mean(side))


def cmd_correct(args, cfg):
    spec = load_spectrum_csv(args.inp)
    ref_spec = load_spectrum_csv(args.reference)
    mode = args.reference_mode or cfg["analysis"]["reference_mode"]
    if mode == "fit":
        ref = build_reference(fit_gaussian_dip(ref_spec, weighted=cfg["analysis"]["weighted"]))
    elif mode == "tabulated":
        ref = reference_from_spectrum(ref_spec)
    else:
        raise UsageError(f"unknown reference mode {mode!r}")
    corrected = apply_correction(spec, ref)
    out = _outdir(args, cfg)
    hdr = _header(cfg, f"input={Path(args.inp).name} reference={Path(args.reference).name}")
    save_spectrum_csv(corrected, out / "corrected_spectrum.csv", hdr)
    write_sidecar(out / "corrected_spectrum.csv", {"header": hdr, "metadata": corrected.metadata,
                                                   "reference": {k: v for k, v in ref.metadata.items()}})
    idx = _parse_indices(args.peaks)
    before, after = _side_ratio(spec, idx, args.tau0), _side_ratio(corrected, idx, args.tau0)
    text = f"reference_mode: {mode}\ncentral_ratio_before: {before:.12g}\ncentral_ratio_after: {after:.12g}\n"
    if spec.metadata.get("mode", "pulsed") == "pulsed":
        centers = [i * args.tau0 for i in idx]
        try:
            rb, eb = central_peak_ratio(fit_peaks(spec, centers), centers)
            ra, ea = central_peak_ratio(fit_peaks(corrected, centers), centers)
        except ValueError as exc:
            text += f"peak_fit: skipped ({exc})\n"
        else:
            ea = corrected_ratio_error(ra, ea, ref)
            text += (f"fitted_ratio_before: {rb:.6g} +- {eb:.3g}\n"
                     f"fitted_ratio_after: {ra:.6g} +- {ea:.3g}\n")
    (out / "correction_report.txt").write_text(f"# {hdr}\n" + text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(args, cfg):
    disc, phd_a, phd_b = build_discriminator(cfg)
    lo, hi = args.v_from, args.v_to
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    for name, phd in (("phd_a", phd_a), ("phd_b", phd_b)):
        s_lo, s_hi = phd.support
        if min(lo, hi) < min(s_lo, 0.0) or max(lo, hi) >= s_hi:
            raise UsageError(f"threshold range [{lo}, {hi}] V leaves the {name} support {phd.support}")
    rows = []
    for v in np.linspace(lo, hi, args.steps):
        f_a = loss_fraction_F(phd_a, phd_b, disc.k_b, v)
        f_b = loss_fraction_F(phd_b, phd_a, disc.k_a, v)
        rows.append((float(v), f_a, f_b, 1 - (1 - f_a) * (1 - f_b)))
    hdr = _header(cfg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_sweep_csv(rows, out / "threshold_sweep.csv", hdr)
    print("v_th_V,F_A,F_B,predicted_dip")
    for r in rows:
        print(",".join(f"{x:.9g}" for x in r))
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="cxtalk", description="Crosstalk-induced coincidence dip modelling.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", dest="sub_config", help="TOML configuration file")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("simulate", help="analytic spectra with and without crosstalk")
    common(sp)
    sp.add_argument("--mode", choices=("continuous", "pulsed"))
    sp.add_argument("--variant", choices=("anchored", "literal"))

    sp = sub.add_parser("montecarlo", help="event-level Monte Carlo oracle")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--events", type=int)

    sp = sub.add_parser("fit", help="Gaussian dip or peak fits of a spectrum CSV")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--kind", choices=("dip", "peaks"), default="dip")
    sp.add_argument("--tau0", type=float, default=11.8)
    sp.add_argument("--peaks", default="-3..3")
    sp.add_argument("--weighted", action="store_true")

    sp = sub.add_parser("correct", help="divide out a continuous-source reference")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--reference-mode", choices=("fit", "tabulated"))
    sp.add_argument("--tau0", type=float, default=11.8)
    sp.add_argument("--peaks", default="-3..3")

    sp = sub.add_parser("sweep-threshold", help="loss fractions versus discriminator threshold")
    common(sp)
    sp.add_argument("--from", dest="v_from", type=float, required=True)
    sp.add_argument("--to", dest="v_to", type=float, required=True)
    sp.add_argument("--steps", type=int, default=11)
    return p


COMMANDS = {"simulate": cmd_simulate, "montecarlo": cmd_montecarlo, "fit": cmd_fit,
            "correct": cmd_correct, "sweep-threshold": cmd_sweep}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "sub_config", None) or args.config
    try:
        cfg = load_config(cfg_path)
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, SpectrumFormatError, FileNotFoundError) as exc:
        print(f"cxtalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"cxtalk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
