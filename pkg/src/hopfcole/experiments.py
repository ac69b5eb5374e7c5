"""Experiment bundles behind the CLI commands.

Each ``run_<command>(cfg)`` takes a fully resolved config dict, draws all
randomness from ``cfg["seed"]`` and returns a :class:`Report` holding the
CSV tables, the scalar results and one pass/fail line per assertion.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from . import attention as attn
from . import attribution as attr
from . import characteristics as ch
from . import integrable as kp
from . import quadrature as qd
from . import robustness as rb
from .core import HJNetwork, Metric, SupportSet, build_network, identity_residual, lse_forward
from .reports import Report

G_FUNCTIONS = {
    "abs": lambda Y: np.sqrt((Y ** 2).sum(axis=1)),
    "smooth": lambda Y: np.cos(2.0 * Y).sum(axis=1),
    "quadratic": lambda Y: 0.5 * (Y ** 2).sum(axis=1),
}

DEFAULT_NS = {
    ("quadrature", 1): [16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 10000],
    ("quadrature", 2): [256, 576, 1024, 2304, 4096, 10000],
    ("scaling", 1): [8, 12, 16, 24, 32, 48, 64],
    ("scaling", 2): [36, 64, 144, 256, 576, 1024],
}


def default_ns(command: str, d: int) -> list[int]:
    try:
        return list(DEFAULT_NS[(command, d)])
    except KeyError:
        raise ValueError(f"no default N list for {command} in d = {d}; pass --Ns") from None


def _g_fn(name):
    try:
        return G_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown g {name!r}; choose from {sorted(G_FUNCTIONS)}") from None


def random_spd(rng, d: int) -> np.ndarray:
    B = rng.standard_normal((d, d))
    return B @ B.T / d + 0.5 * np.eye(d)


def rel_error(a, b) -> float:
    a, b = np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float))
    nb = float(np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    return diff / nb if nb > 0 else diff


def fd5(f, x, k, h) -> float:
    """Fourth-order central difference of f along coordinate k."""
    e = np.zeros_like(x)
    e[k] = h
    return (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12.0 * h)


def _worst(rows, col):
    return max(rows, key=lambda r: r[col]) if rows else None


# -- verify


def run_verify(cfg) -> Report:
    rep = Report("verify", cfg)
    rng = np.random.default_rng(cfg["seed"])
    t, N, m, R = cfg["t"], cfg["N"], cfg["n_points"], cfg["x_range"]

    sup = SupportSet(rng.uniform(-1, 1, (N, 1)), rng.normal(0, 1, N))
    X = rng.uniform(-R, R, (m, 1))
    rows = [[1, N, m, e, float(np.max(identity_residual(sup, X, t, e)))] for e in cfg["eps"]]
    rep.table("identity", ["d", "N", "n_points", "eps", "max_residual"], rows)

    d2 = cfg["aniso_dim"]
    A = random_spd(rng, d2)
    sup2 = SupportSet(rng.uniform(-1, 1, (N, d2)), rng.normal(0, 1, N))
    X2 = rng.uniform(-R, R, (m, d2))
    rows2 = [[d2, N, m, e, float(np.max(identity_residual(sup2, X2, t, e, Metric(A))))]
             for e in cfg["eps"]]
    rep.table("identity_anisotropic", ["d", "N", "n_points", "eps", "max_residual"], rows2)
    for name, rr in (("identity", rows), ("identity_anisotropic", rows2)):
        w = _worst(rr, 4)
        rep.check(f"{name} residual <= {cfg['tol_identity']:g}", w[4] <= cfg["tol_identity"],
                  f"worst row eps={w[3]!r} residual={w[4]:.3e}")

    arows, lrows = [], []
    for d in cfg["attn_dims"]:
        err = attn.attention_trials(d, cfg["attn_trials"], int(rng.integers(2 ** 63)))
        arows.append([d, math.sqrt(d), cfg["attn_trials"], err])
        l2 = 0.0
        for _ in range(cfg["l2_trials"]):
            Q, K = rng.standard_normal((8, d)), rng.standard_normal((12, d))
            l2 = max(l2, attn.l2_partition_check(Q, K, t, math.sqrt(d)))
        lrows.append([d, math.sqrt(d), cfg["l2_trials"], l2])
    rep.table("attention", ["d", "eps", "trials", "max_abs_error"], arows)
    rep.table("l2_attention", ["d", "eps", "trials", "max_abs_error"], lrows)
    w = _worst(arows, 3)
    rep.check(f"attention identity <= {cfg['tol_attention']:g}", w[3] <= cfg["tol_attention"],
              f"worst row d={w[0]} error={w[3]:.3e}")
    w = _worst(lrows, 3)
    rep.check(f"L2 attention log-partition <= {cfg['tol_l2']:g}", w[3] <= cfg["tol_l2"],
              f"worst row d={w[0]} error={w[3]:.3e}")

    brows = []
    for i in range(cfg["block_trials"]):
        p = attn.BlockParams.random(rng, cfg["block_d"], cfg["block_hidden"], cfg["eps_ffn"], t)
        r = attn.transformer_block_check(rng.standard_normal((cfg["block_tokens"], cfg["block_d"])), p)
        brows.append([i, r.attention_error, r.ffn1_residual, r.ffn2_residual])
    rep.table("transformer", ["trial", "attention_error", "ffn1_residual", "ffn2_residual"], brows)
    worst = max(max(r[1:]) for r in brows)
    rep.check(f"transformer block errors <= {cfg['tol_block']:g}", worst <= cfg["tol_block"],
              f"max error {worst:.3e}")
    rep.results.update(max_identity_residual=max(r[4] for r in rows + rows2),
                       max_attention_error=max(r[3] for r in arows), max_block_error=worst)
    return rep


# -- quadrature and scaling


def run_quadrature(cfg) -> Report:
    rep = Report("quadrature", cfg)
    d, t = cfg["d"], cfg["t"]
    g = _g_fn(cfg["g"])
    box = (-cfg["box"], cfg["box"])
    curve = qd.quadrature_error_curve(g, d, t, cfg["Ns"], cfg["eps_rule"], cfg["eps"], box=box)
    rep.table("curve", ["N", "eps", "error"],
              [[int(n), float(e), float(err)] for n, e, err in zip(curve.N, curve.eps, curve.errors)])
    expected = -1.0 / d
    rep.table("fit", ["d", "slope", "expected_slope", "tolerance"],
              [[d, curve.slope, expected, cfg["slope_tol"]]])
    rep.results.update(slope=curve.slope, expected_slope=expected, norm=curve.norm)
    if curve.slope is not None:
        rep.check(f"slope within {cfg['slope_tol']:g} of -1/d", abs(curve.slope - expected) <= cfg["slope_tol"],
                  f"slope {curve.slope:.4f}, expected {expected:.4f}")

    if cfg["bias_supports"] > 0:
        rng = np.random.default_rng(cfg["seed"])
        E = np.geomspace(cfg["bias_eps_max"], cfg["bias_eps_max"] / 10.0, cfg["bias_n_eps"])
        Xb = np.linspace(-cfg["bias_x_range"], cfg["bias_x_range"], cfg["bias_points"])[:, None]
        rows, bad = [], []
        for s in range(cfg["bias_supports"]):
            sup = SupportSet(rng.uniform(-1, 1, (cfg["bias_N"], 1)), rng.normal(0, cfg["bias_g_sd"], cfg["bias_N"]))
            bc = qd.viscosity_bias_curve(sup, Xb, cfg["bias_t"], E)
            ok = bc.within_factor(cfg["bias_factor"])
            if not ok:
                bad.append(s)
            rows += [[s, float(e), float(dv), float(r), bc.C, ok] for e, dv, r in zip(bc.eps, bc.deviation, bc.ratios)]
        rep.table("bias", ["support", "eps", "sup_deviation", "ratio", "C", "within_factor"], rows)
        rep.results["bias_failures"] = len(bad)
        rep.check(f"viscosity bias ratio within factor {cfg['bias_factor']:g}", not bad,
                  f"{len(bad)} of {cfg['bias_supports']} supports outside" + (f" (first: {bad[0]})" if bad else ""))
    return rep


def run_scaling(cfg) -> Report:
    rep = Report("scaling", cfg)
    d, t = cfg["d"], cfg["t"]
    curve = qd.quadrature_error_curve(_g_fn(cfg["g"]), d, t, cfg["Ns"], "scaled", box=(-cfg["box"], cfg["box"]))
    keep = curve.errors > cfg["error_floor"]
    rep.table("loss", ["N", "eps", "loss", "fitted"],
              [[int(n), float(e), float(err), bool(k)] for n, e, err, k in zip(curve.N, curve.eps, curve.errors, keep)])
    if keep.sum() >= 3:
        fit = qd.scaling_fit(np.c_[curve.N[keep], curve.errors[keep]])
        rep.results.update(alpha=fit.alpha, d_eff=fit.d_eff, r_squared=fit.r_squared)
        if cfg["g"] == "abs":
            rep.check("alpha within 0.15 of 1/d (Lipschitz g)", abs(fit.alpha - 1.0 / d) <= 0.15,
                      f"alpha {fit.alpha:.4f}, 1/d {1.0 / d:.4f}")
        else:
            rep.check("alpha >= 1/d (smooth g)", fit.alpha >= 1.0 / d, f"alpha {fit.alpha:.4f}, 1/d {1.0 / d:.4f}")
    else:
        rep.check("at least three points above the error floor", False,
                  f"{int(keep.sum())} points above {cfg['error_floor']:g}")
    rows = [[a, qd.d_eff_from_alpha(a), round(qd.d_eff_from_alpha(a), 1)] for a in cfg["alphas"]]
    rep.table("deff", ["alpha", "d_eff", "d_eff_rounded"], rows)
    return rep


# -- robustness


def _random_net(rng, cfg):
    N = int(rng.integers(2, cfg["N_max"] + 1))
    d = int(rng.integers(1, cfg["d_max"] + 1))
    eps = float(math.exp(rng.uniform(math.log(cfg["eps_min"]), math.log(cfg["eps_max"]))))
    return HJNetwork(rng.standard_normal((N, d)), rng.standard_normal(N), eps, 1.0)


def run_robustness(cfg) -> Report:
    rep = Report("robustness", cfg)
    rng = np.random.default_rng(cfg["seed"])

    rows = []
    for i in range(cfg["trials"]):
        net = _random_net(rng, cfg)
        x = rng.uniform(-2, 2, net.dim)
        pn, bound = rb.hessian_spectral_norm(net, x)
        exact = float(np.linalg.eigvalsh(rb.input_hessian(net, x))[-1])
        norm = max(pn, exact)
        rows.append([net.eps, norm, bound, norm > bound])
    rep.table("hessian_bound", ["eps", "norm", "bound", "violated"], rows)
    nv = sum(r[3] for r in rows)
    rep.check("zero Hessian-bound violations", nv == 0, f"{nv} of {len(rows)} violated")

    prow = []
    for i in range(cfg["perturb_trials"]):
        net = _random_net(rng, cfg)
        x = rng.uniform(-2, 2, net.dim)
        r = float(rng.uniform(0.01, 1.0))
        change, bound = rb.perturbation_check(net, x, r, cfg["perturb_samples"], int(rng.integers(2 ** 63)))
        prow.append([i, net.eps, r, change, bound, change > bound * (1 + 1e-12)])
    rep.table("perturbation", ["trial", "eps", "r", "max_change", "bound", "violated"], prow)
    nv = sum(r[5] for r in prow)
    rep.check("zero perturbation-bound violations", nv == 0, f"{nv} of {len(prow)} violated")

    crow = []
    for i in range(cfg["radius_trials"]):
        net = _random_net(rng, cfg)
        big = HJNetwork(net.W, net.b, cfg["large_eps"], net.t)
        cert = rb.certified_radius(big, cfg["tau"])
        limit = cfg["tau"] / cert.w_row_norm_max
        crow.append([i, cfg["large_eps"], cert.certified_radius, limit, abs(cert.certified_radius - limit)])
    rep.table("radius_limit", ["trial", "eps", "certified_radius", "tau_over_w", "abs_diff"], crow)
    w = _worst(crow, 4)
    rep.check("large-eps radius within 1e-4 of tau/||W||", w[4] <= 1e-4, f"max diff {w[4]:.3e}")

    trow = []
    for i in range(cfg["tie_trials"]):
        d = int(rng.integers(1, cfg["d_max"] + 1))
        sup = SupportSet(rng.standard_normal((2, d)), rng.normal(0, 0.3, 2))
        t = float(rng.uniform(0.2, 2.0))
        eps = float(math.exp(rng.uniform(math.log(cfg["eps_min"]), math.log(cfg["eps_max"]))))
        net = build_network(sup, t, eps)
        xc = rb.shock_crossing(sup, 0, 1, t)
        hn = float(np.linalg.eigvalsh(rb.input_hessian(net, xc))[-1])
        target = float(np.sum((net.W[0] - net.W[1]) ** 2)) / (4.0 * eps)
        trow.append([i, d, eps, hn, target, abs(hn - target) / target])
    rep.table("tie_hessian", ["trial", "d", "eps", "hessian_norm", "target", "rel_diff"], trow)
    w = _worst(trow, 5)
    rep.check("two-atom tie Hessian equals |W1-W2|^2/(4 eps) to 1e-10", w[5] <= 1e-10, f"max rel diff {w[5]:.3e}")

    ks = cfg["ks"]
    peaks = [rb.refined_peak_hessian(k, cfg["shock_t"], cfg["shock_eps"]) for k in ks]
    ref = peaks[0] * ks[0] ** 2
    srow = [[k, p, p * k ** 2 / ref] for k, p in zip(ks, peaks)]
    rep.table("near_shock", ["k", "peak_hessian", "ratio_to_k_minus_2"], srow)
    dec = all(b < a for a, b in zip(peaks, peaks[1:]))
    within = all(0.5 <= r[2] <= 2.0 for r in srow)
    rep.check("near-shock peak decreasing in k", dec, ", ".join(f"{p:.4g}" for p in peaks))
    rep.check("near-shock peak ~ k^-2 within factor 2", within, ", ".join(f"{r[2]:.4f}" for r in srow))
    return rep


# -- bifurcation


def run_bifurcation(cfg) -> Report:
    rep = Report("bifurcation", cfg)
    sup = attr.two_cluster_support(cfg["seed"], cfg["n_per_cluster"], cfg["spread"], cfg["separation"])
    E = np.geomspace(cfg["eps_min"], cfg["eps_max"], cfg["n_eps"])
    trace = attr.bifurcation_sweep(sup, cfg["t"], E, continuation_passes=cfg["continuation_passes"],
                                   bisections=cfg["bisections"])
    rep.tables["counts"] = trace.to_csv()
    rep.tables["points"] = trace.points_csv()
    rep.tables["support"] = sup.to_csv()
    rep.table("folds", ["index", "eps_lo", "eps_hi", "count_before", "count_after", "grid_signature",
                        "refined_min_saddle_eig", "signature_ok"],
              [[f.index, f.eps_interval[0], f.eps_interval[1], f.count_before, f.count_after,
                f.grid_signature, f.refined_min_saddle_eig, f.signature_ok] for f in trace.folds])
    counts = trace.counts
    scale = sup.diameter() ** 2 / (4.0 * cfg["t"])
    chi = [m - s + M for m, s, M in (trace.type_counts(k) for k in range(len(E)))]
    rep.results.update(counts=counts, diameter_sq_over_4t=scale, folds=len(trace.folds),
                       grid_signatures_ok=trace.grid_signatures_ok(),
                       euler_characteristic_mismatches=int(sum(c != 1 for c in chi)))
    rep.check("critical-point count nonincreasing in eps", trace.counts_nonincreasing(),
              "counts " + " ".join(map(str, counts)))
    rep.check("sweep reaches eps >> diameter^2/(4t)", E[-1] >= 10 * scale, f"eps_max {E[-1]:g}, scale {scale:.4g}")
    rep.check("count ends at 1", counts[-1] == 1, f"final count {counts[-1]}")
    bad = [f.index for f in trace.folds if not f.signature_ok]
    rep.check("fold signature at every count drop", not bad,
              f"{len(trace.folds)} drops" + (f", failing at grid index {bad}" if bad else ""))
    return rep


# -- attribution


def _attr_instance(rng, cfg):
    N = int(rng.integers(2, cfg["N_max"] + 1))
    d = int(rng.integers(1, cfg["d_max"] + 1))
    sup = SupportSet(rng.uniform(-1, 1, (N, d)), rng.normal(0, 0.5, N))
    t = float(rng.uniform(0.2, 2.0))
    eps = float(rng.uniform(cfg["eps_min"], cfg["eps_max"]))
    return sup, rng.uniform(-1, 1, d), t, eps


def attribution_fd_errors(sup, x, t, eps, rel_step):
    """Relative errors of label sensitivity, prediction gradient and entropy gradient against FD."""
    N, d = sup.size, sup.dim
    ls = np.array([attr.label_sensitivity(sup, x, t, eps, j) for j in range(N)])

    def f_of_g(gv):
        return float(attr.gibbs_weights(sup.with_values(gv), x, t, eps).pi @ gv)

    hg = rel_step * eps
    ls_fd = np.array([fd5(f_of_g, sup.values.copy(), j, hg) for j in range(N)])
    hx = rel_step * math.sqrt(t * eps)
    pg_fd = np.array([fd5(lambda z: float(attr.gibbs_weights(sup, z, t, eps).pi @ sup.values), x, k, hx)
                      for k in range(d)])
    H_fd = np.array([fd5(lambda z: attr.attribution_entropy(sup, z, t, eps)[0], x, k, hx) for k in range(d)])
    return (rel_error(ls, ls_fd), rel_error(attr.prediction_gradient(sup, x, t, eps), pg_fd),
            rel_error(attr.attribution_entropy(sup, x, t, eps)[1], H_fd))


def run_attribution(cfg) -> Report:
    rep = Report("attribution", cfg)
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for i in range(cfg["instances"]):
        sup, x, t, eps = _attr_instance(rng, cfg)
        rows.append([i, sup.size, sup.dim, t, eps, *attribution_fd_errors(sup, x, t, eps, cfg["fd_rel_step"])])
    rep.table("fd", ["instance", "N", "d", "t", "eps", "label_sensitivity_rel_err",
                     "prediction_gradient_rel_err", "entropy_gradient_rel_err"], rows)
    for col, name in ((5, "label sensitivity"), (6, "prediction gradient"), (7, "entropy gradient")):
        w = _worst(rows, col)
        rep.check(f"{name} matches FD to {cfg['tol']:g}", w[col] <= cfg["tol"],
                  f"worst instance {w[0]}: {w[col]:.3e}")

    nrows = []
    for i in range(cfg["ntk_trials"]):
        N, n, d = cfg["ntk_N"], cfg["ntk_n"], int(rng.integers(1, cfg["d_max"] + 1))
        sup = SupportSet(rng.uniform(-1, 1, (N, d)), rng.normal(0, 0.5, N))
        xs = rng.uniform(-1, 1, (n, d))
        _, mineig = attr.ntk_gram(sup, xs, 1.0, cfg["ntk_eps"])
        cert = attr.ntk_certified_positive(sup, xs, 1.0, cfg["ntk_eps"])
        nrows.append([i, N, n, d, mineig, mineig > 0 and cert])
    rep.table("ntk", ["trial", "N", "n", "d", "min_eig", "certified_positive"], nrows)
    npos = sum(r[5] for r in nrows)
    rep.check("NTK Gram positive definite (above rounding) in every trial", npos == len(nrows),
              f"{npos}/{len(nrows)} positive")
    return rep


# -- characteristics


def run_characteristics(cfg) -> Report:
    rep = Report("characteristics", cfg)
    rng = np.random.default_rng(cfg["seed"])
    d, T, L = cfg["d"], cfg["T"], cfg["L"]
    loss = lambda z: 0.5 * float(z @ z)  # noqa: E731

    rows, example = [], None
    for fam in cfg["families"]:
        for i in range(cfg["instances"]):
            F = ch.random_drift(fam, d, rng, cfg["scale"])
            x0 = rng.standard_normal(d)
            traj = ch.resnet_forward(F, x0, T / L, L)
            co = ch.costate_backward(traj, traj.states[-1])
            fd = ch.fd_input_gradient(F, x0, T / L, L, loss, cfg["fd_step"])
            rows.append([fam, i, rel_error(co.costates[0], fd)])
            if example is None:
                example = ch.trajectory_csv(traj, co)
    rep.table("adjoint", ["family", "instance", "rel_err"], rows)
    w = _worst(rows, 2)
    rep.check(f"co-state matches FD input gradient to {cfg['tol']:g}", w[2] <= cfg["tol"],
              f"worst {w[0]} #{w[1]}: {w[2]:.3e}")
    if example is not None:
        rep.tables["trajectory"] = example

    frows = []
    for i in range(cfg["ff_instances"]):
        N, dd = cfg["ff_N"], int(rng.integers(1, 4))
        sup = SupportSet(rng.uniform(-1, 1, (N, dd)), rng.normal(0, 0.5, N))
        net = build_network(sup, float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.1, 1.0)))
        x = rng.uniform(-1, 1, dd)
        f = lse_forward(net, x)
        adj = ch.feedforward_adjoint(net, x, f)
        fd = ch.fd_value_adjoint(net, x, lambda v: 0.5 * v * v)
        frows.append([i, rel_error(adj, fd)])
    rep.table("feedforward_adjoint", ["instance", "rel_err"], frows)
    w = _worst(frows, 1)
    rep.check(f"feedforward adjoint matches FD to {cfg['tol']:g}", w[1] <= cfg["tol"],
              f"worst #{w[0]}: {w[1]:.3e}")

    L1, L2 = cfg["hamiltonian_L"]
    hrows = []
    for fam in cfg["families"]:
        for i in range(cfg["hamiltonian_instances"]):
            F = ch.random_drift(fam, d, rng, cfg["scale"])
            x0 = rng.standard_normal(d)
            d1, d2 = ch.hamiltonian_drift(F, x0, T, L1), ch.hamiltonian_drift(F, x0, T, L2)
            traj = ch.resnet_forward(F, x0, T / L1, L1)
            H0 = abs(float(ch.hamiltonian_trace(traj, ch.costate_backward(traj, traj.states[-1]))[0]))
            hrows.append([fam, i, d1, d2, d1 / d2 if d2 > 0 else math.inf, H0])
    rep.table("hamiltonian", ["family", "instance", f"drift_L{L1}", f"drift_L{L2}", "ratio", "abs_H0"], hrows)
    for fam in cfg["families"]:
        fr = [r for r in hrows if r[0] == fam]
        if fam == "linear":
            # A commutes with I + hA, so p.Ax is conserved exactly by the discrete pair
            worst = max(max(r[2], r[3]) / max(1.0, r[5]) for r in fr)
            rep.check("linear drift conserves H to rounding", worst <= 1e-10, f"max relative drift {worst:.3e}")
        else:
            worst = min(r[4] for r in fr)
            rep.check(f"{fam} drift shrinks ~linearly in h (ratio >= 1.8)", worst >= 1.8,
                      f"min ratio {worst:.4f}")

    A = cfg["scale"] * rng.standard_normal((d, d))
    x0 = rng.standard_normal(d)
    erows = [[Lk, ch.euler_error(A, x0, T, Lk)] for Lk in cfg["euler_L"]]
    rep.table("euler", ["L", "error"], erows)
    ratios = [a[1] / b[1] for a, b in zip(erows, erows[1:])]
    rep.check("Euler error first order (ratio in [1.8, 2.2] per doubling)",
              all(1.8 <= r <= 2.2 for r in ratios), ", ".join(f"{r:.4f}" for r in ratios))
    return rep


# -- integrable


def run_integrable(cfg) -> Report:
    rep = Report("integrable", cfg)
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for i in range(cfg["n_tau"]):
        # one generator per instance so any row can be replayed from (seed, instance)
        irng = np.random.default_rng([cfg["seed"], i])
        tau = kp.random_tau(irng, cfg["n_max"], cfg["k_max"])
        x1, x2, x3 = irng.uniform(-cfg["x_range"], cfg["x_range"], 3)
        rb_ = kp.hirota_residual_bilinear(tau, x1, x2, x3)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", kp.CancellationWarning)
            rf = kp.hirota_residual_fd(tau, x1, x2, x3)
        flagged = any(issubclass(w.category, kp.CancellationWarning) for w in caught)
        budget = kp.fd_error_budget(tau, x1, x2, x3)
        rows.append([tau.N, i, rb_, rf, budget, abs(rf - rb_) <= budget, flagged])
    rep.table("hirota", ["N", "seed", "bilinear_residual", "fd_residual", "fd_budget",
                         "fd_consistent", "rounding_dominated"], rows)
    w = max(rows, key=lambda r: abs(r[2]))
    rep.check(f"bilinear residual <= {cfg['tol_bilinear']:g}", abs(w[2]) <= cfg["tol_bilinear"],
              f"worst instance {w[1]}: {w[2]:.3e}")
    bad = [r[1] for r in rows if not r[5]]
    rep.check("FD residual within its error budget", not bad,
              f"{len(bad)} of {len(rows)} outside" + (f" (first: {bad[0]})" if bad else ""))
    max_bilinear = abs(w[2])

    irows = []
    for i in range(cfg["identity_trials"]):
        N = int(rng.integers(1, cfg["n_max"] + 1))
        sup = SupportSet(rng.uniform(-1, 1, (N, 1)), rng.normal(0, 0.5, N))
        t, eps = float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.05, 1.0))
        x = float(rng.uniform(-2, 2))
        irows.append([i, N, t, eps, x, kp.tau_log_identity(sup, x, t, eps)])
    rep.table("tau_identity", ["trial", "N", "t", "eps", "x", "abs_diff"], irows)
    w = _worst(irows, 5)
    rep.check(f"tau-log identity <= {cfg['tol_identity']:g}", w[5] <= cfg["tol_identity"],
              f"worst trial {w[0]}: {w[5]:.3e}")
    rep.results.update(max_bilinear=max_bilinear, flagged=sum(r[6] for r in rows))
    return rep


# -- build


def run_build(cfg) -> Report:
    rep = Report("build", cfg)
    rng = np.random.default_rng(cfg["seed"])
    if cfg["support"]:
        sup = SupportSet.from_csv(cfg["support"])
    else:
        sup = SupportSet(rng.uniform(-1, 1, (cfg["N"], cfg["d"])), rng.normal(0, 1, cfg["N"]))
    metric = Metric(random_spd(rng, sup.dim)) if cfg["anisotropic"] else None
    net = build_network(sup, cfg["t"], cfg["eps"], metric)
    text = net.to_json()
    rep.files["network.json"] = text
    rep.tables["support"] = sup.to_csv()
    X = rng.uniform(-2, 2, (cfg["n_points"], sup.dim))
    back = HJNetwork.from_json(text)
    rt = float(np.max(np.abs(lse_forward(back, X) - lse_forward(net, X))))
    res = float(np.max(identity_residual(sup, X, cfg["t"], cfg["eps"], metric)))
    rep.results.update(width=net.width, dim=net.dim, roundtrip_max_diff=rt, identity_residual=res)
    rep.check("JSON round trip reproduces the forward pass", rt == 0.0, f"max diff {rt:.3e}")
    rep.check("identity residual <= 1e-12", res <= 1e-12, f"residual {res:.3e}")
    return rep


RUNNERS = {
    "verify": run_verify,
    "quadrature": run_quadrature,
    "scaling": run_scaling,
    "robustness": run_robustness,
    "bifurcation": run_bifurcation,
    "attribution": run_attribution,
    "characteristics": run_characteristics,
    "integrable": run_integrable,
    "build": run_build,
}
