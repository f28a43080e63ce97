"""Estimation error bounds and run audits.

The estimator's guarantee has three faces, all derived from the same
certificate: a window-wise bound at each sampling time (prop3_bound), a
global geometric-decay bound from the initial error and the disturbance
energy (theorem1_bound), and a sup-norm form with explicit constants
(sup_bound_constants).  audit_run evaluates all of them numerically along a
finished estimation run against the stored ground truth.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AuditError, ConfigurationError, DomainError
from .certify import contraction_rate, geneig_max, min_horizon
from .mhe import discount_weights
from .sysmodel import as_grid_index

FLOAT_FMT = "%.17g"


def _quad(M, v):
    return float(v @ M @ v)


def theorem1_bound(cert, rho, chi, chi_hat, w, t_i, factor=8):
    """Decay-plus-energy bound on |x(t_i) - xhat(t_i)|^2_P1:

        factor/2 * rho^t_i * |chi - chi_hat|^2_P2
          + factor * int_0^t_i rho^(t_i - tau) |w|^2_Q dtau

    with the leading coefficient fixed at 4 regardless of factor; factor = 8
    for general sampling sets, 4 under the tightened equidistant bookkeeping.
    w must cover [0, t_i) on its own grid.
    """
    if factor not in (4, 8):
        raise ConfigurationError("factor must be 4 or 8")
    if not 0.0 < rho < 1.0:
        raise ConfigurationError("rho must lie strictly inside (0, 1)")
    N = as_grid_index(t_i, w.dt, "t_i")
    if w.n_pieces < N or abs(w.t0) > 1e-12:
        raise ConfigurationError("w must cover [0, t_i) from t0 = 0")
    d0 = np.asarray(chi, dtype=float) - np.asarray(chi_hat, dtype=float)
    val = 4.0 * rho ** t_i * _quad(cert.P2, d0)
    if N:
        om = discount_weights(rho, N, w.dt, horizon=t_i)
        wv = w.values[:N]
        val += factor * float(np.sum(om * np.einsum("ji,ik,jk->j", wv, cert.Q, wv)))
    return val


def prop3_bound(cert, t, t_i, T_ti, U_prior, w):
    """Window-wise bound on the Lyapunov-type distance U at time t <= t_i:

        lam^(t - t_i) * (4*lmax(P2, P1)*lam^T_ti * U_prior
                         + 4 * int |w|^2_Q discounted over the window)

    U_prior is U at the window start, supplied by the caller; w is the
    window's disturbance segment (T_ti long on its own grid).
    """
    if t > t_i:
        raise DomainError("prop3_bound is only valid for t <= t_i")
    lam = cert.lam
    lmax = geneig_max(cert.P2, cert.P1)
    N = as_grid_index(T_ti, w.dt, "window length")
    if w.n_pieces < N:
        raise ConfigurationError("w segment shorter than the window")
    val = 4.0 * lmax * lam ** T_ti * float(U_prior)
    if N:
        om = discount_weights(lam, N, w.dt, horizon=T_ti)
        wv = w.values[:N]
        val += 4.0 * float(np.sum(om * np.einsum("ji,ik,jk->j", wv, cert.Q, wv)))
    return lam ** (t - t_i) * val


@dataclass(frozen=True)
class SupBoundConstants:
    """Constants of the sup-norm error bound
    |x - xhat|(t) <= max(C * |chi - chi_hat| * rho_s^t, gamma_coeff * ||w||_sup)."""

    C: float
    rho_s: float
    gamma_coeff: float

    def gamma(self, w_sup):
        return self.gamma_coeff * w_sup


def sup_bound_constants(cert, rho, factor=8):
    """Convert the squared-energy bound into sup-norm form.

    C = sqrt(8 * eigmax(P2) / eigmin(P1)) (independent of factor),
    rho_s = sqrt(rho), gamma_coeff = sqrt(2*factor*eigmax(Q) /
    (-eigmin(P1) * ln rho)).
    """
    if factor not in (4, 8):
        raise ConfigurationError("factor must be 4 or 8")
    if not 0.0 < rho < 1.0:
        raise ConfigurationError("rho must lie strictly inside (0, 1)")
    p1_min = float(np.linalg.eigvalsh(cert.P1)[0])
    p2_max = float(np.linalg.eigvalsh(cert.P2)[-1])
    q_max = float(np.linalg.eigvalsh(cert.Q)[-1])
    C = math.sqrt(8.0 * p2_max / p1_min)
    gamma_coeff = math.sqrt(2.0 * factor * q_max / (-p1_min * math.log(rho)))
    return SupBoundConstants(C, math.sqrt(rho), gamma_coeff)


@dataclass
class BoundReport:
    """Numerical audit of the error bounds along one estimation run."""

    times: np.ndarray
    lhs: np.ndarray            # |x - xhat|^2_P1 at each sampling time
    rhs: np.ndarray            # theorem1_bound at each sampling time
    margin: np.ndarray         # rhs - lhs
    u_prior: np.ndarray        # window-start distance used by the prop3 records
    prop3_lhs: np.ndarray
    prop3_rhs: np.ndarray
    sup_lhs: np.ndarray        # |x - xhat| (euclidean) at each sampling time
    sup_rhs: np.ndarray
    rho: float
    factor: int
    delta_bar_used: float
    lmax: float
    constants: SupBoundConstants
    eq_rate_residual: float    # |rho^(T-db) - 4*lmax*lam^(T-db)| consistency check
    passed: bool
    prop3_passed: bool
    sup_passed: bool
    worst_margin: float

    def to_csv(self, path):
        header = "t_i,lhs,rhs,margin,u_prior,prop3_lhs,prop3_rhs,sup_lhs,sup_rhs"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for k in range(self.times.size):
                fh.write(",".join(FLOAT_FMT % v for v in (
                    self.times[k], self.lhs[k], self.rhs[k], self.margin[k],
                    self.u_prior[k], self.prop3_lhs[k], self.prop3_rhs[k],
                    self.sup_lhs[k], self.sup_rhs[k])) + "\n")

    def summary(self):
        return {
            "passed": bool(self.passed),
            "prop3_passed": bool(self.prop3_passed),
            "sup_passed": bool(self.sup_passed),
            "rho": self.rho,
            "factor": self.factor,
            "delta_bar_used": self.delta_bar_used,
            "lmax": self.lmax,
            "worst_margin": self.worst_margin,
            "C": self.constants.C,
            "rho_s": self.constants.rho_s,
            "gamma_coeff": self.constants.gamma_coeff,
            "eq_rate_residual": self.eq_rate_residual,
            "n_samples": int(self.times.size),
        }


def audit_run(run, cert=None, rel_tol=1e-9):
    """Check the error bounds along a finished run against its ground truth.

    Uses delta_bar = 0 and factor 4 under the equidistant bookkeeping
    (cfg.equidistant_mode), otherwise the sampling set's delta_bar and factor
    8.  The window-wise records evaluate U through the P1 form on the left
    and the P2 form for U_prior on the right; for single-P certificates
    (P1 = P2) both are exact, otherwise they bracket U conservatively so the
    check stays sound.  Refuses (HorizonError) when T is not strictly above
    the admissible minimum.
    """
    if run.truth is None:
        raise AuditError("audit needs a run with ground truth attached")
    cfg = run.cfg
    cert = cert or cfg.cert
    sampling = run.sampling
    if cfg.equidistant_mode:
        delta_bar = 0.0
        factor = 4
    else:
        delta_bar = sampling.delta_bar
        factor = 8
    rho = contraction_rate(cert, cfg.T, delta_bar)
    lmax = geneig_max(cert.P2, cert.P1)
    Tdb = cfg.T - delta_bar
    eq_res = abs(rho ** Tdb - 4.0 * lmax * cert.lam ** Tdb)
    consts = sup_bound_constants(cert, rho, factor)

    chi = run.truth.chi
    chi_hat = run.chi_hat
    w = run.truth.w
    x_true = run.truth.x_true.states
    est = run.estimate
    n_s = len(run.solutions)
    times = np.empty(n_s)
    lhs = np.empty(n_s)
    rhs = np.empty(n_s)
    u_prior = np.empty(n_s)
    p3_lhs = np.empty(n_s)
    p3_rhs = np.empty(n_s)
    sup_lhs = np.empty(n_s)
    sup_rhs = np.empty(n_s)
    s0 = float(np.linalg.norm(chi - chi_hat))
    for i, sol in enumerate(run.solutions):
        k_i = as_grid_index(sol.t_i, run.dt, "sample time")
        N_i = sol.w_star.n_pieces
        s_i = k_i - N_i
        err = x_true[k_i] - est[k_i]
        times[i] = sol.t_i
        lhs[i] = _quad(cert.P1, err)
        rhs[i] = theorem1_bound(cert, rho, chi, chi_hat, w, sol.t_i, factor)
        err0 = x_true[s_i] - est[s_i]
        u_prior[i] = _quad(cert.P2, err0)
        w_seg = w.slice(s_i * run.dt, k_i * run.dt)
        p3_lhs[i] = lhs[i]
        p3_rhs[i] = prop3_bound(cert, sol.t_i, sol.t_i, sol.T_ti, u_prior[i], w_seg)
        sup_lhs[i] = float(np.linalg.norm(err))
        w_sup = float(np.max(np.linalg.norm(w.values[:k_i], axis=1))) if k_i else 0.0
        sup_rhs[i] = max(consts.C * s0 * consts.rho_s ** sol.t_i, consts.gamma(w_sup))
    margin = rhs - lhs
    passed = bool(np.all(margin >= -rel_tol * np.abs(rhs)))
    prop3_passed = bool(np.all(p3_rhs - p3_lhs >= -1e-6 * np.abs(p3_rhs)))
    sup_passed = bool(np.all(sup_rhs - sup_lhs >= -rel_tol * np.abs(sup_rhs)))
    worst = float(np.min(margin / np.where(np.abs(rhs) > 0, np.abs(rhs), 1.0)))
    return BoundReport(times, lhs, rhs, margin, u_prior, p3_lhs, p3_rhs, sup_lhs,
                       sup_rhs, rho, factor, delta_bar, lmax, consts, eq_res,
                       passed, prop3_passed, sup_passed, worst)
