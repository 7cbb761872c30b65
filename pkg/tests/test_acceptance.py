"""End-to-end acceptance suite.

Eight numbered criteria, one test each.  Every test prints a single
PASS/FAIL summary line (bypassing capture so the verdicts always appear
in the run log) before asserting, so a red test still reports the
measured numbers.
"""
import numpy as np
import pytest
from scipy.integrate import quad

from zenojump import qsim, zeno
from zenojump.experiments import (ExperimentConfig, run_calibration,
                                  run_zeno_experiment)
from zenojump.jumps import DwellRecord
from zenojump.rates import (RateModel, calibrate_bias, dwell_pdf,
                            dwell_survival, fit_rates, sample_dwell_times)
from zenojump.telegraph import STATE_A, STATE_B
from zenojump.transmon_purcell import (diagonalize_transmon, fit_ej_ec,
                                       purcell_rate_coherent,
                                       purcell_rate_fock, two_level_system)
from zenojump.zeno import (DriveParams, dispersive_derived, mhz,
                           pointer_states, reference_device_params)

MASTER_SEED = 20240817


_CAPSYS = None


@pytest.fixture(autouse=True)
def _acceptance_output(capsys):
    """Expose capsys so verdict lines can bypass fd-level capture."""
    global _CAPSYS
    _CAPSYS = capsys
    yield
    _CAPSYS = None


def report(n, ok, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    if _CAPSYS is not None:
        with _CAPSYS.disabled():
            print(line, flush=True)
    print(line)


# --------------------------------------------------------------------------
# 1. Full-pipeline extraction bias on simulated telegraph data
# --------------------------------------------------------------------------

def test_criterion_1_extraction_bias():
    rates = [0.2, 0.72, 2.4, 7.7]  # mean dwell 5 us down to 0.13 us
    snrs = [1.5, 2.0, 3.0, 5.0]
    table = calibrate_bias(rates, snrs, n_traces=500, seed=MASTER_SEED,
                           n_sets=2)
    failures = []
    for i, rate in enumerate(rates):
        for j, snr in enumerate(snrs):
            b = table.bias[i, j]
            limit = 0.05 if snr >= 3.0 else 0.15
            if not np.isfinite(b) or abs(b) > limit:
                failures.append(f"rate={rate} snr={snr} bias={b:+.1%}"
                                f" (limit {limit:.0%})")
    worst = np.nanmax(np.abs(table.bias))
    ok = not failures
    report(1, ok, f"bias grid {len(rates)}x{len(snrs)}, 500 traces x 10 us, "
           f"2 sets; worst |bias| = {worst:.1%}; "
           + ("all cells within limits" if ok
              else f"{len(failures)} cell(s) out of tolerance: "
              + "; ".join(failures)))
    assert ok, failures


# --------------------------------------------------------------------------
# 2. Maximum-likelihood estimator against exact oracle samples
# --------------------------------------------------------------------------

def _oracle_dwells(truth, n, rng, censor_frac):
    dwells = []
    for state in (STATE_A, STATE_B):
        t = sample_dwell_times(truth, state, n, rng)
        horizon = np.quantile(t, 1.0 - censor_frac)
        cens = t > horizon
        t = np.minimum(t, horizon)
        dwells.extend(DwellRecord(state, float(tt), bool(cc))
                      for tt, cc in zip(t, cens))
    return dwells


def test_criterion_2_mle_oracle():
    truth = RateModel(1.0, 2.0, 50.0)
    rng = np.random.default_rng(MASTER_SEED)

    # point estimates: N = 1e5 per state, 10% right-censored
    fit = fit_rates(_oracle_dwells(truth, 100_000, rng, 0.10),
                    compute_ci=False)
    err_a = abs(fit.model.gamma_a - 1.0)
    err_b = abs(fit.model.gamma_b - 2.0) / 2.0
    point_ok = err_a < 0.05 and err_b < 0.05

    # 95% profile-interval coverage over 100 repeats (reduced N so the
    # hundred profile optimizations stay affordable)
    covered = 0
    for k in range(100):
        dwells = _oracle_dwells(truth, 1500, rng, 0.10)
        f = fit_rates(dwells, ci_params=("gamma_a",))
        lo, hi = f.ci95["gamma_a"]
        covered += lo <= 1.0 <= hi
    coverage_ok = covered >= 90

    ok = point_ok and coverage_ok
    report(2, ok, f"N=1e5 point errors ({err_a:.1%}, {err_b:.1%}) vs 5%; "
           f"CI coverage {covered}/100 (need >= 90, N=1500 per repeat)")
    assert ok


# --------------------------------------------------------------------------
# 3. Dwell-density analytics
# --------------------------------------------------------------------------

def test_criterion_3_pdf_analytics():
    rng = np.random.default_rng(MASTER_SEED)
    worst_norm = 0.0
    s0_exact = True
    for _ in range(100):
        ga, gb = np.exp(rng.uniform(np.log(0.05), np.log(30), 2))
        gd = np.exp(rng.uniform(np.log(0.5), np.log(300)))
        m = RateModel(ga, gb, gd)
        for state in (STATE_A, STATE_B):
            gx = ga if state == STATE_A else gb
            theta = m.theta(state)
            r1, r2 = (m.lam - theta) / 2.0, (m.lam + theta) / 2.0
            # integrate each exponential stage by quadrature and assemble;
            # cross-check the integrand against dwell_pdf pointwise
            ts = np.array([0.3 / r2, 1.0 / r1])
            assert np.allclose(
                gx * gd * (np.exp(-r1 * ts) - np.exp(-r2 * ts)) / (r2 - r1),
                dwell_pdf(ts, m, state), rtol=1e-13)
            i1, _ = quad(lambda t: np.exp(-r1 * t), 0, np.inf)
            i2, _ = quad(lambda t: np.exp(-r2 * t), 0, np.inf)
            worst_norm = max(worst_norm,
                             abs(gx * gd * (i1 - i2) / (r2 - r1) - 1.0))
            if float(dwell_survival(0.0, m, state)) != 1.0:
                s0_exact = False

    # |s' + h| < 1e-6 on a grid
    m = RateModel(1.0, 2.0, 50.0)
    ts = np.linspace(0.01, 3.0, 300)
    eps = 1e-6
    ds = (dwell_survival(ts + eps, m, STATE_A)
          - dwell_survival(ts - eps, m, STATE_A)) / (2 * eps)
    worst_deriv = float(np.max(np.abs(ds + dwell_pdf(ts, m, STATE_A))))

    # asymptotic branch vs extended precision at theta*t = 40
    import mpmath
    mpmath.mp.dps = 50
    theta = m.theta(STATE_A)
    worst_branch = 0.0
    for u in (19.999, 20.001, 25.0):
        t = 2.0 * u / theta
        ref = float(mpmath.log(2 * m.gamma_a * m.gamma_det / theta)
                    - m.lam * mpmath.mpf(t) / 2
                    + mpmath.log(mpmath.sinh(theta * mpmath.mpf(t) / 2)))
        got = float(np.log(dwell_pdf(t, m, STATE_A)))
        worst_branch = max(worst_branch, abs(got - ref) / abs(ref))

    ok = (worst_norm < 1e-9 and s0_exact and worst_deriv < 1e-6
          and worst_branch < 1e-12)
    report(3, ok, f"worst |int h - 1| = {worst_norm:.1e} (100 triples); "
           f"s(0)=1 exact: {s0_exact}; worst |s'+h| = {worst_deriv:.1e}; "
           f"large-argument branch rel err = {worst_branch:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 4. Measurement-suppressed drive-induced rates from the full simulator
# --------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_zeno_scaling(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "seed": MASTER_SEED, "outdir": str(tmp_path / "zeno"), "n_traj": 100,
        "sme": {"duration": 10.0, "n_fock": 8, "dt": 5e-4},
        "grids": {"omega_mhz": [0.5, 1.0, 2.0], "gamma_m": [10.0, 20.0, 40.0],
                  "snr": [3.0], "rate": [1.0]},
    })
    rows, n_failed = run_zeno_experiment(cfg)

    cell_failures = []
    by_gm = {}
    for r in rows:
        om, gm, up_drive, pred = r[0], r[1], r[6], r[7]
        if om == 0.0:
            continue
        if not np.isfinite(up_drive):
            cell_failures.append(f"Gm={gm:g} O={om:g}MHz simulation failed")
            continue
        by_gm.setdefault(gm, []).append((om, up_drive))
        ratio = up_drive / pred
        if not 0.75 <= ratio <= 1.25:
            cell_failures.append(f"Gm={gm:g} O={om:g}MHz "
                                 f"ratio={ratio:.2f}")
    exponent_failures = []
    exponents = {}
    for gm, pts in by_gm.items():
        pts.sort()
        oms = np.array([p[0] for p in pts])
        ups = np.array([max(p[1], 1e-12) for p in pts])
        slope = np.polyfit(np.log(oms), np.log(ups), 1)[0]
        exponents[gm] = slope
        if not 1.8 <= slope <= 2.2:
            exponent_failures.append(f"Gm={gm:g} exponent={slope:.2f}")

    ok = n_failed == 0 and not cell_failures and not exponent_failures
    exp_str = ", ".join(f"Gm={g:g}:{e:.2f}" for g, e in sorted(exponents.items()))
    report(4, ok, f"100 traj x 10 us per cell; exponents {exp_str}; "
           + ("all 9 cells within 25%" if ok else
              f"out of tolerance: {'; '.join(cell_failures + exponent_failures)}"))
    assert ok, (cell_failures, exponent_failures)


# --------------------------------------------------------------------------
# 5. Multi-level cavity-mediated decay
# --------------------------------------------------------------------------

def test_criterion_5_purcell():
    p = reference_device_params()
    lv2 = two_level_system(p.omega_q, p.g)
    spec = fit_ej_ec(p.omega_q, p.anharmonicity)
    lv5 = diagonalize_transmon(spec, 5, g0=p.g)
    lv6 = diagonalize_transmon(spec, 6, g0=p.g)

    r0 = purcell_rate_fock(0, lv2, p.omega_r, p.kappa).rate
    perturbative = p.kappa * p.g ** 2 / p.delta ** 2
    zero_ok = abs(r0 - perturbative) / perturbative < 0.05

    curve2 = [purcell_rate_fock(n, lv2, p.omega_r, p.kappa).rate
              for n in range(41)]
    mono_ok = all(b < a for a, b in zip(curve2, curve2[1:]))

    nbars = [0.0, 5.0, 10.0, 20.0, 30.0]
    c5 = np.array([purcell_rate_coherent(nb, lv5, p.omega_r, p.kappa).rate
                   for nb in nbars])
    c6 = np.array([purcell_rate_coherent(nb, lv6, p.omega_r, p.kappa).rate
                   for nb in nbars])
    c2_30 = purcell_rate_coherent(30.0, lv2, p.omega_r, p.kappa).rate
    five_ge_two = c5[-1] >= c2_30
    five_six = float(np.max(np.abs(c5 - c6) / c6))

    ok = zero_ok and mono_ok and five_ge_two and five_six < 0.02
    report(5, ok, f"G(0) 2-level = {r0:.3f}/us vs kappa g^2/Delta^2 = "
           f"{perturbative:.3f} ({(r0 - perturbative) / perturbative:+.1%}); "
           f"2-level monotone: {mono_ok}; 5-level >= 2-level at nbar=30: "
           f"{five_ge_two}; 5 vs 6 level max dev {five_six:.2%}")
    assert ok


# --------------------------------------------------------------------------
# 6. Stochastic-integrator integrity
# --------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_sme_integrity():
    from zenojump.experiments import (_build_levels, _measurement_setup,
                                      asdict_simparams)
    cfg = ExperimentConfig.from_dict({"seed": 1})
    setup = _build_levels(cfg)
    meas = _measurement_setup(setup, 20.0)
    params = qsim.SimParams(levels=setup["levels"], omega_r=setup["omega_r"],
                            kappa=setup["kappa"], omega_ro=setup["omega_ro"],
                            epsilon_ro=meas["eps_ro"], omega_d=meas["omega_d"],
                            gamma_1=1.0, gamma_phi=0.5, eta=1.0,
                            phi_lo=meas["phi_lo"])
    hilbert = qsim.HilbertConfig(2, 8, dt=5e-4, duration=1.0)

    # (a) trace and Hermiticity preserved every step of a monitored run
    ops = qsim.build_operators(hilbert, params)
    u0 = qsim.static_propagator(ops, hilbert.dt)
    rho = ops.basis_state(1, 0)
    rng = np.random.default_rng(3)
    herm_ok = True
    for k in range(600):
        rho, _ = qsim.split_sme_step(rho, hilbert.dt,
                                     rng.normal() * np.sqrt(hilbert.dt),
                                     ops, u0, t=k * hilbert.dt)
        if (abs(np.real(np.trace(rho)) - 1.0) > 1e-12
                or not np.allclose(rho, rho.conj().T, atol=1e-12)):
            herm_ok = False
            break

    # (b) eta = 0 run equals the monitored ensemble mean within 3 SE
    det_params = qsim.SimParams(**{**asdict_simparams(params), "eta": 0.0})
    rec0 = qsim.simulate_trajectory(det_params, hilbert, seed=0, ringup=0.3,
                                    initial=(1, 0), record_dt=0.05)
    finals = []
    seeds = np.random.SeedSequence(MASTER_SEED).spawn(200)
    for s in seeds:
        rec = qsim.simulate_trajectory(params, hilbert, s, ringup=0.3,
                                       initial=(1, 0), record_dt=0.05)
        finals.append(rec.populations[-1, 1])
    finals = np.array(finals)
    se = finals.std(ddof=1) / np.sqrt(finals.size)
    gap = abs(finals.mean() - rec0.populations[-1, 1])
    ensemble_ok = gap <= 3 * se

    # (c) undriven decay recovers gamma_1 = 1/0.575 (decoupled qubit)
    g1 = 1.0 / 0.575
    lv = two_level_system(mhz(5000.0), 0.0)
    bare = qsim.SimParams(levels=lv, omega_r=mhz(6000.0), kappa=0.0,
                          omega_ro=mhz(6000.0), epsilon_ro=0.0,
                          gamma_1=g1, eta=0.0)
    rec = qsim.simulate_trajectory(bare, qsim.HilbertConfig(2, 2, dt=2e-4,
                                                            duration=1.0),
                                   seed=0, ringup=0.0, initial=(1, 0))
    slope = -np.polyfit(rec.times, np.log(rec.populations[:, 1]), 1)[0]
    decay_ok = abs(slope - g1) / g1 < 0.03

    # (d) noise-increment statistics, generated the way the stepper uses them
    rng = np.random.default_rng(11)
    dt = hilbert.dt
    dws = np.concatenate([rng.standard_normal(4096) * np.sqrt(dt)
                          for _ in range(256)])
    n = dws.size
    mean_ok = abs(dws.mean()) < 3 * np.sqrt(dt / n)
    var_ok = abs(dws.var() - dt) / dt < 3 * np.sqrt(2.0 / n)

    ok = herm_ok and ensemble_ok and decay_ok and mean_ok and var_ok
    report(6, ok, f"trace/hermiticity per step: {herm_ok}; eta=0 vs ensemble "
           f"gap {gap:.4f} vs 3SE {3 * se:.4f}; decay {slope:.3f} vs "
           f"{g1:.3f} ({(slope - g1) / g1:+.1%}); dW mean/var tests: "
           f"{mean_ok}/{var_ok}")
    assert ok


# --------------------------------------------------------------------------
# 7. Dispersive-readout analytics at the reference design point
# --------------------------------------------------------------------------

def test_criterion_7_dispersive_analytics():
    p = reference_device_params()
    chi, _, n_crit = dispersive_derived(p)
    chi_mhz = chi / (2 * np.pi)
    chi_ok = abs(chi_mhz - 12.1) < 0.05
    ncrit_ok = abs(n_crit - 19.0) < 0.2

    ms = pointer_states(p, DriveParams(omega_ro=mhz(6282.0), epsilon_ro=25.0))
    ident_ok = (abs(ms.gamma_m - p.kappa * abs(ms.beta) ** 2)
                <= 1e-12 * ms.gamma_m
                and abs(ms.n_bar_g - abs(ms.alpha_g) ** 2) <= 1e-12 * ms.n_bar_g
                and abs(ms.n_bar_e - abs(ms.alpha_e) ** 2) <= 1e-12 * ms.n_bar_e)

    ok = chi_ok and ncrit_ok and ident_ok
    report(7, ok, f"chi/2pi = {chi_mhz:.3f} MHz (target ~12.1); n_crit = "
           f"{n_crit:.2f} (target ~19); pointer identities at machine "
           f"precision: {ident_ok}")
    assert ok


# --------------------------------------------------------------------------
# 8. Byte-level determinism of experiment outputs
# --------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    def cfg(outdir):
        return ExperimentConfig.from_dict({
            "seed": MASTER_SEED, "outdir": str(outdir), "n_traj": 2,
            "sme": {"duration": 1.5, "ringup": 0.5, "n_fock": 8, "dt": 5e-4},
            "telegraph": {"n_traces": 20},
            "grids": {"omega_mhz": [1.0], "gamma_m": [20.0],
                      "snr": [5.0], "rate": [1.0]},
        })

    out = tmp_path / "det"
    run_zeno_experiment(cfg(out), threads=1)
    zeno_first = (out / "zeno_rates.csv").read_bytes()
    run_zeno_experiment(cfg(out), threads=1)
    rerun_same = (out / "zeno_rates.csv").read_bytes() == zeno_first
    run_zeno_experiment(cfg(out), threads=2)
    threads_same = (out / "zeno_rates.csv").read_bytes() == zeno_first

    run_calibration(cfg(out))
    cal_first = (out / "calibration.csv").read_bytes()
    run_calibration(cfg(out))
    cal_same = (out / "calibration.csv").read_bytes() == cal_first

    ok = rerun_same and threads_same and cal_same
    report(8, ok, f"rerun byte-identical: {rerun_same}; thread-count "
           f"independent: {threads_same}; calibration rerun identical: "
           f"{cal_same}")
    assert ok
