"""``hopfcole <command> [--flag value]... [--config path] [--out dir]``

Every default the experiments use lives in :data:`DEFAULTS`. A config file
holds ``key = value`` lines (``#`` starts a comment); flags override the
file, the file overrides the defaults. The effective config, seed included,
is echoed into the JSON summary. The exit status is 0 iff every assertion
passed, 1 if one failed and 2 on a usage or input error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import kernels
from .experiments import RUNNERS, default_ns

# type codes: float, int, str, bool, floats, ints, strs; a trailing "?" allows "none"
COMMON = {"seed": ("int", 0, "64-bit seed for every random draw")}

DEFAULTS = {
    "verify": {
        "t": ("float", 1.0, "time horizon"),
        "N": ("int", 4, "atoms per support"),
        "n_points": ("int", 500, "evaluation points per eps"),
        "x_range": ("float", 3.0, "points drawn uniformly from [-x_range, x_range]^d"),
        "eps": ("floats", [1.0, 0.5, 0.2, 0.1, 0.05], "viscosities"),
        "aniso_dim": ("int", 2, "dimension of the random-SPD-metric check"),
        "tol_identity": ("float", 1e-12, "identity residual tolerance"),
        "attn_dims": ("ints", [4, 8, 16, 32, 64], "attention key dimensions"),
        "attn_trials": ("int", 500, "random batches per dimension"),
        "l2_trials": ("int", 100, "L2-attention batches per dimension"),
        "tol_attention": ("float", 1e-15, "softmax vs grad-LSE tolerance"),
        "tol_l2": ("float", 1e-12, "L2 log-partition tolerance"),
        "block_trials": ("int", 20, "random transformer blocks"),
        "block_tokens": ("int", 6, "tokens per block input"),
        "block_d": ("int", 8, "model width"),
        "block_hidden": ("int", 16, "LSE-FFN hidden width"),
        "eps_ffn": ("float", 0.5, "LSE-FFN viscosity"),
        "tol_block": ("float", 1e-12, "transformer block tolerance"),
    },
    "quadrature": {
        "d": ("int", 1, "dimension (1 or 2)"),
        "t": ("float", 1.0, "time horizon"),
        "g": ("str", "abs", "initial data: abs | smooth | quadratic"),
        "Ns": ("ints?", None, "support sizes (none: the per-d default list)"),
        "eps_rule": ("str", "scaled", "scaled (eps = N^(-1/d)) or fixed"),
        "eps": ("float?", None, "viscosity for the fixed rule"),
        "box": ("float", 2.0, "support and oracle box [-box, box]^d"),
        "slope_tol": ("float", 0.15, "allowed |slope + 1/d|"),
        "bias_supports": ("int", 100, "random supports for the viscosity-bias check (0 skips)"),
        "bias_N": ("int", 16, "atoms per bias support (d = 1)"),
        "bias_g_sd": ("float", 0.3, "std of the random initial values"),
        "bias_t": ("float", 0.5, "time horizon of the bias check"),
        "bias_eps_max": ("float", 0.1, "largest eps; the sweep covers one decade below"),
        "bias_n_eps": ("int", 5, "eps values in the decade"),
        "bias_x_range": ("float", 3.0, "bias evaluation grid [-x_range, x_range]"),
        "bias_points": ("int", 2001, "bias evaluation grid size"),
        "bias_factor": ("float", 3.0, "allowed spread of sup|u_eps - u_0|/eps around its mean"),
    },
    "scaling": {
        "d": ("int", 1, "dimension (1 or 2)"),
        "t": ("float", 1.0, "time horizon"),
        "g": ("str", "smooth", "initial data: abs | smooth | quadratic"),
        "Ns": ("ints?", None, "support sizes (none: the per-d default list)"),
        "box": ("float", 2.0, "support and oracle box [-box, box]^d"),
        "error_floor": ("float", 1e-12, "losses at or below this are rounding and left out of the fit"),
        "alphas": ("floats", [0.076, 0.35, 0.24, 0.38], "exponents converted to d_eff = 1/alpha"),
    },
    "robustness": {
        "trials": ("int", 10000, "random (net, x, eps) triples for the Hessian bound"),
        "N_max": ("int", 12, "largest width"),
        "d_max": ("int", 4, "largest input dimension"),
        "eps_min": ("float", 0.01, "log-uniform eps range"),
        "eps_max": ("float", 10.0, "log-uniform eps range"),
        "perturb_trials": ("int", 200, "nets for the perturbation bound"),
        "perturb_samples": ("int", 64, "random directions per net"),
        "radius_trials": ("int", 100, "nets for the large-eps radius limit"),
        "large_eps": ("float", 1e8, "eps of the radius limit"),
        "tau": ("float", 0.1, "output tolerance"),
        "tie_trials": ("int", 100, "two-atom tie Hessians"),
        "ks": ("ints", [1, 2, 4, 8], "near-shock refinement levels"),
        "shock_t": ("float", 0.5, "near-shock time horizon"),
        "shock_eps": ("float", 1e-3, "near-shock viscosity"),
    },
    "bifurcation": {
        "n_per_cluster": ("int", 8, "atoms per cluster"),
        "spread": ("float", 0.35, "cluster standard deviation"),
        "separation": ("float", 1.0, "cluster centres at (+-separation, 0)"),
        "t": ("float", 0.5, "time horizon"),
        "eps_min": ("float", 0.05, "first eps of the geometric grid"),
        "eps_max": ("float", 50.0, "last eps of the geometric grid"),
        "n_eps": ("int", 40, "grid size"),
        "continuation_passes": ("int", 2, "forward+backward reseeding passes"),
        "bisections": ("int", 10, "log-eps bisections per count drop"),
    },
    "attribution": {
        "instances": ("int", 200, "random FD instances"),
        "N_max": ("int", 10, "largest support"),
        "d_max": ("int", 3, "largest dimension"),
        "eps_min": ("float", 0.05, "uniform eps range"),
        "eps_max": ("float", 1.0, "uniform eps range"),
        "fd_rel_step": ("float", 1e-3, "FD step relative to eps (labels) or sqrt(t eps) (inputs)"),
        "tol": ("float", 1e-5, "relative tolerance"),
        "ntk_trials": ("int", 100, "NTK Gram trials"),
        "ntk_N": ("int", 12, "atoms per NTK support"),
        "ntk_n": ("int", 6, "query points per Gram matrix"),
        "ntk_eps": ("float", 0.5, "NTK viscosity"),
    },
    "characteristics": {
        "families": ("strs", ["linear", "tanh", "quadratic"], "drift families"),
        "d": ("int", 4, "state dimension"),
        "T": ("float", 1.0, "total time"),
        "L": ("int", 50, "layers of the adjoint check"),
        "scale": ("float", 0.5, "drift weight scale"),
        "instances": ("int", 100, "adjoint instances per family"),
        "fd_step": ("float", 1e-6, "FD step on the input"),
        "tol": ("float", 1e-6, "relative tolerance"),
        "ff_instances": ("int", 100, "feedforward adjoint instances"),
        "ff_N": ("int", 8, "atoms per feedforward layer"),
        "hamiltonian_instances": ("int", 20, "Hamiltonian drift instances per family"),
        "hamiltonian_L": ("ints", [100, 200], "layer counts compared for the drift"),
        "euler_L": ("ints", [50, 100, 200], "layer counts for the Euler error"),
    },
    "integrable": {
        "n_tau": ("int", 500, "random tau-functions"),
        "n_max": ("int", 8, "largest number of solitons"),
        "k_max": ("float", 3.0, "wavenumbers uniform in [-k_max, k_max]"),
        "x_range": ("float", 1.0, "times uniform in [-x_range, x_range]"),
        "tol_bilinear": ("float", 1e-10, "bilinear residual tolerance"),
        "identity_trials": ("int", 100, "tau-log identity trials"),
        "tol_identity": ("float", 1e-12, "tau-log identity tolerance"),
    },
    "build": {
        "support": ("str", "", "support CSV (header y_0..y_{d-1},g); empty draws a random one"),
        "N": ("int", 8, "atoms of the random support"),
        "d": ("int", 2, "dimension of the random support"),
        "t": ("float", 1.0, "time horizon"),
        "eps": ("float", 0.1, "viscosity"),
        "anisotropic": ("bool", False, "use a random SPD metric"),
        "n_points": ("int", 200, "points for the round-trip and identity checks"),
    },
}

HELP = {
    "verify": "identity, attention and transformer verification tables",
    "quadrature": "quadrature error curve, fitted slope and viscosity bias",
    "scaling": "loss-vs-N power law and d_eff conversions",
    "robustness": "Hessian bound, perturbation bound, certified radius, near-shock scaling",
    "bifurcation": "critical points of the attribution entropy across eps",
    "attribution": "influence formulas against finite differences, NTK positivity",
    "characteristics": "co-state backprop, Hamiltonian drift and Euler order",
    "integrable": "Hirota residuals of free-soliton tau-functions",
    "build": "emit an LSE network as JSON from a support",
}


class ConfigError(ValueError):
    pass


def _parse_value(code: str, text: str, key: str):
    text = text.strip()
    optional = code.endswith("?")
    code = code.rstrip("?")
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if code == "float":
            return float(text)
        if code == "int":
            return int(text, 0)
        if code == "str":
            return text
        if code == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        items = [s.strip() for s in text.split(",") if s.strip()]
        if not items:
            raise ValueError("empty list")
        if code == "floats":
            return [float(s) for s in items]
        if code == "ints":
            return [int(s, 0) for s in items]
        if code == "strs":
            return items
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key} (expected {code})") from None
    raise ConfigError(f"unknown type code {code!r}")


def spec_for(command: str) -> dict:
    return {**COMMON, **DEFAULTS[command]}


def read_config_file(path, command: str) -> dict:
    spec = spec_for(command)
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in spec:
            raise ConfigError(f"{path}:{n}: unknown key {key!r} for {command}")
        out[key] = _parse_value(spec[key][0], value, key)
    return out


def resolve_config(command: str, file_values: dict | None = None, flag_values: dict | None = None) -> dict:
    """Defaults, then file, then flags; fills the per-d N lists and validates."""
    spec = spec_for(command)
    cfg = {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in spec.items()}
    cfg.update(file_values or {})
    cfg.update(flag_values or {})
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if command in ("quadrature", "scaling"):
        if cfg["d"] not in (1, 2):
            raise ConfigError("d must be 1 or 2")
        if cfg["Ns"] is None:
            cfg["Ns"] = default_ns(command, cfg["d"])
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hopfcole", description="LSE layers as Hopf-Cole solutions: "
                                "reproducible verification experiments.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for cmd in DEFAULTS:
        sp = sub.add_parser(cmd, help=HELP[cmd], description=HELP[cmd])
        sp.add_argument("--config", default=None, help="key = value file; flags override it")
        sp.add_argument("--out", default="out", help="output directory")
        for key, (code, default, text) in spec_for(cmd).items():
            names = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            shown = ",".join(map(str, default)) if isinstance(default, list) else default
            sp.add_argument(*names, dest=f"opt_{key}", default=None, metavar=code.upper(),
                            help=f"{text} (default: {shown})")
    return p


def run(command: str, cfg: dict):
    t0 = time.perf_counter()
    rep = RUNNERS[command](cfg)
    rep.duration_s = time.perf_counter() - t0
    rep.results.setdefault("kernel_backend", kernels.BACKEND)
    return rep


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cmd = args.command
    spec = spec_for(cmd)
    try:
        flags = {k: _parse_value(spec[k][0], v, k) for k, v in
                 ((name[4:], val) for name, val in vars(args).items() if name.startswith("opt_"))
                 if v is not None}
        file_values = read_config_file(args.config, cmd) if args.config else {}
        cfg = resolve_config(cmd, file_values, flags)
    except (ConfigError, OSError) as exc:
        print(f"hopfcole: error: {exc}", file=sys.stderr)
        return 2
    print(f"command: {cmd}")
    print(f"seed: {cfg['seed']}")
    try:
        rep = run(cmd, cfg)
    except (ValueError, OSError) as exc:
        print(f"hopfcole: error: {exc}", file=sys.stderr)
        return 2
    for a in rep.assertions:
        print(f"{'PASS' if a.passed else 'FAIL'}  {a.name}: {a.detail}")
    for path in rep.write(args.out):
        print(f"wrote {path}")
    print(f"result: {'PASS' if rep.passed else 'FAIL'} ({rep.duration_s:.2f} s)")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
