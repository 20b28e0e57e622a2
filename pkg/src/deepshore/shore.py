"""Gaussian-Laguerre x spherical harmonic signal basis over q-space.

The basis expands a multi-shell diffusion signal as

    E(q) = sum_nlm c_nlm G_nl(q, zeta) Y_lm(u)

with radial functions

    G_nl(q, zeta) = kappa_nl(zeta) (q^2/zeta)^(l/2) exp(-q^2/(2 zeta))
                    * L_{(n-l)/2}^{(l+1/2)}(q^2/zeta)

where kappa_nl makes the radial family orthonormal under
``int_0^inf G_nl G_n'l q^2 dq = delta``. Valid indices are n even up to
the radial order, l even up to n, |m| <= l; a radial order of 6 yields
50 coefficients. The q radius is taken as sqrt(b): the scale parameter
zeta is optimized per dataset, so any fixed physical proportionality
constant between q^2 and b would be unidentifiable and is absorbed
into zeta.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import sh
from .errors import (
    InvalidArgumentError,
    OptimizationFailureError,
    SingularSystemError,
)
from .sh import _check_even, _solve_regularized
from .sphere import DirectionSet


class QSpaceSamples:
    """A paired (b-value, direction) acquisition scheme.

    The q radius of each sample is derived as sqrt(b), so q^2 equals the
    b-value exactly.
    """

    def __init__(self, bvalues, directions):
        b = np.array(bvalues, dtype=float)
        if not isinstance(directions, DirectionSet):
            directions = DirectionSet(directions)
        if b.ndim != 1 or b.shape[0] != len(directions):
            raise InvalidArgumentError(
                f"got {b.shape} b-values for {len(directions)} directions"
            )
        if np.any(b < 0):
            raise InvalidArgumentError("b-values must be non-negative")
        b.flags.writeable = False
        self.bvalues = b
        self.directions = directions
        q = np.sqrt(b)
        q.flags.writeable = False
        self.q = q

    def __len__(self):
        return self.bvalues.shape[0]

    def subset(self, index):
        """Scheme restricted to the given sample indices / boolean mask."""
        idx = np.asarray(index)
        return QSpaceSamples(self.bvalues[idx], DirectionSet(self.directions.vectors[idx]))

    def shells(self):
        """Distinct b-values in ascending order."""
        return np.unique(self.bvalues)

    def __repr__(self):
        return f"QSpaceSamples(n={len(self)}, shells={self.shells().tolist()})"


@dataclass(frozen=True)
class ShoreFitConfig:
    """Fit settings: radial order and the two regularization constants."""

    radial_order: int = 6
    lambda_n: float = 1e-8
    lambda_l: float = 1e-8

    def __post_init__(self):
        _check_even(self.radial_order, "radial_order")
        if self.lambda_n < 0 or self.lambda_l < 0:
            raise InvalidArgumentError("regularization constants must be non-negative")


def shore_index_set(radial_order):
    """(n, l, m) triples in coefficient order: n, then l, then m ascending."""
    _check_even(radial_order, "radial_order")
    triples = []
    for n in range(0, radial_order + 1, 2):
        for l in range(0, n + 1, 2):
            for m in range(-l, l + 1):
                triples.append((n, l, m))
    return triples


def shore_coeff_count(radial_order):
    """Size of the index set; equals (N+2)(N+4)(2N+3)/24."""
    return len(shore_index_set(radial_order))


class ShoreSeries:
    """Coefficients of one q-space expansion at a fixed scale."""

    def __init__(self, radial_order, zeta, coeffs):
        _check_even(radial_order, "radial_order")
        if zeta <= 0:
            raise InvalidArgumentError("zeta must be positive")
        c = np.array(coeffs, dtype=float)
        expected = shore_coeff_count(radial_order)
        if c.shape != (expected,):
            raise InvalidArgumentError(
                f"expected {expected} coefficients at radial order {radial_order}, "
                f"got shape {c.shape}"
            )
        c.flags.writeable = False
        self.radial_order = radial_order
        self.zeta = float(zeta)
        self.coeffs = c

    def __repr__(self):
        return f"ShoreSeries(radial_order={self.radial_order}, zeta={self.zeta:g})"


def laguerre(k, alpha, x):
    """Associated Laguerre polynomial L_k^(alpha)(x) by the stable recurrence.

    Vectorized over x.
    """
    if k < 0:
        raise InvalidArgumentError("polynomial degree must be >= 0")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    cur = 1.0 + alpha - x
    for i in range(2, k + 1):
        prev, cur = cur, ((2 * i - 1 + alpha - x) * cur - (i - 1 + alpha) * prev) / i
    return cur


def _check_radial_index(n, l):
    if n < 0 or n % 2 != 0 or l < 0 or l % 2 != 0 or l > n:
        raise InvalidArgumentError(
            f"invalid radial index (n={n}, l={l}): need n, l even with 0 <= l <= n"
        )


def radial_normalization(n, l, zeta):
    """kappa_nl(zeta), fixed by radial orthonormality of the G_nl family."""
    _check_radial_index(n, l)
    if zeta <= 0:
        raise InvalidArgumentError("zeta must be positive")
    k = (n - l) // 2
    log_k2 = (
        np.log(2.0)
        + gammaln(k + 1)
        - 1.5 * np.log(zeta)
        - gammaln((n + l) / 2.0 + 1.5)
    )
    return float(np.exp(0.5 * log_k2))


def radial_basis_g(n, l, q, zeta):
    """Radial basis value G_nl(q, zeta); vectorized over q."""
    _check_radial_index(n, l)
    if zeta <= 0:
        raise InvalidArgumentError("zeta must be positive")
    q = np.asarray(q, dtype=float)
    x = q**2 / zeta
    kappa = radial_normalization(n, l, zeta)
    value = kappa * x ** (l / 2.0) * np.exp(-x / 2.0) * laguerre((n - l) // 2, l + 0.5, x)
    return value if value.ndim else float(value)


def shore_design_matrix(samples, radial_order, zeta):
    """Design matrix with one row per sample and one column per (n, l, m)."""
    if zeta <= 0:
        raise InvalidArgumentError("zeta must be positive")
    triples = shore_index_set(radial_order)
    sh_basis = sh.eval_sh_basis(samples.directions, radial_order)
    sh_degrees, sh_orders = sh.sh_degree_order_table(radial_order)
    sh_col = {(l, m): i for i, (l, m) in enumerate(zip(sh_degrees, sh_orders))}

    matrix = np.empty((len(samples), len(triples)))
    radial_cache = {}
    for col, (n, l, m) in enumerate(triples):
        if (n, l) not in radial_cache:
            radial_cache[(n, l)] = radial_basis_g(n, l, samples.q, zeta)
        matrix[:, col] = radial_cache[(n, l)] * sh_basis[:, sh_col[(l, m)]]
    return matrix


def _penalty_diag(cfg):
    triples = shore_index_set(cfg.radial_order)
    n = np.array([t[0] for t in triples], dtype=float)
    l = np.array([t[1] for t in triples], dtype=float)
    diag = cfg.lambda_n * (n * (n + 1)) ** 2 + cfg.lambda_l * (l * (l + 1)) ** 2
    return diag if diag.any() else None


def fit_shore(signal, samples, cfg, zeta):
    """Regularized least-squares estimate of the expansion coefficients.

    Minimizes ``|M c - signal|^2 + s * (lambda_n |diag(n(n+1)) c|^2
    + lambda_l |diag(l(l+1)) c|^2)`` where s is the mean diagonal of the
    normal matrix, making the constants dimensionless. With both
    constants zero the normal equations must be well conditioned,
    otherwise SingularSystemError.
    """
    signal = np.asarray(signal, dtype=float)
    if signal.shape != (len(samples),):
        raise InvalidArgumentError(
            f"signal length {signal.shape} does not match {len(samples)} samples"
        )
    coeffs = fit_shore_many(signal[None, :], samples, cfg, zeta)
    return ShoreSeries(cfg.radial_order, zeta, coeffs[0])


def fit_shore_many(signals, samples, cfg, zeta):
    """Fit one series per row of `signals`; returns the coefficient matrix."""
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[1] != len(samples):
        raise InvalidArgumentError("signals must have shape (n_voxels, n_samples)")
    design = shore_design_matrix(samples, cfg.radial_order, zeta)
    penalty = _penalty_diag(cfg)
    guard = penalty is None
    coeffs = _solve_regularized(design, penalty, signals.T, guard=guard)
    return coeffs.T


def reconstruct_signal(series, samples):
    """Evaluate a fitted expansion at the given q-space samples."""
    design = shore_design_matrix(samples, series.radial_order, series.zeta)
    return design @ series.coeffs


def default_zeta0(samples):
    """Dimensionally sensible starting scale: median b-value over 8."""
    start = float(np.median(samples.bvalues)) / 8.0
    if start <= 0:
        raise InvalidArgumentError("median b-value must be positive to seed zeta")
    return start


def _mean_refit_residual(signals, design, penalty):
    coeffs = _solve_regularized(design, penalty, signals.T, guard=penalty is None)
    residual = design @ coeffs - signals.T
    return float(np.mean(residual**2))


def optimize_zeta(signals, samples, cfg, zeta0, *, max_iterations=100,
                  gradient_step=1e-4, tolerance=1e-6, probe_spread=1.5,
                  subsample=None, subsample_seed=0):
    """Data-optimized scale: minimize the mean squared refit residual.

    Every objective evaluation refits all coefficients at the candidate
    scale. A small deterministic probe grid around `zeta0` (out to
    `probe_spread` e-folds either way) picks the starting point, then
    the search runs over log(zeta) with a quasi-Newton (secant
    curvature) update, central-difference gradients of `gradient_step`
    in log zeta, and a backtracking line search that only ever accepts
    descent. The returned scale therefore never has a worse objective
    than `zeta0`. The local phase stops when the log-scale step drops
    below `tolerance` or after `max_iterations`.

    Parameters
    ----------
    signals : array_like, shape (n_voxels, n_samples)
        One signal per row; a single 1-D signal is also accepted.
    subsample : int, optional
        Optimize on a seeded random subset of this many voxels.

    Returns
    -------
    float
        The optimized scale, strictly positive.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=float))
    if signals.size == 0:
        raise InvalidArgumentError("need at least one signal to optimize zeta")
    if signals.shape[1] != len(samples):
        raise InvalidArgumentError("signal length does not match sample count")
    if zeta0 <= 0:
        raise InvalidArgumentError("zeta0 must be positive")
    if subsample is not None and subsample < signals.shape[0]:
        pick = np.random.default_rng(subsample_seed).choice(
            signals.shape[0], size=subsample, replace=False
        )
        signals = signals[np.sort(pick)]

    penalty = _penalty_diag(cfg)
    last_valid = [None, None]

    def objective(log_zeta):
        try:
            design = shore_design_matrix(samples, cfg.radial_order, float(np.exp(log_zeta)))
            value = _mean_refit_residual(signals, design, penalty)
        except (SingularSystemError, ValueError, np.linalg.LinAlgError):
            # solver refusals (including non-finite data) count as a
            # non-finite objective
            value = np.inf
        if not np.isfinite(value):
            raise OptimizationFailureError(
                f"objective not finite at zeta={np.exp(log_zeta):.6g}",
                zeta=last_valid[0], objective=last_valid[1],
            )
        last_valid[0], last_valid[1] = float(np.exp(log_zeta)), value
        return value

    t = float(np.log(zeta0))
    f = objective(t)
    best_t, best_f = t, f
    # the refit residual can be nearly flat in zeta with shallow local
    # bumps; a coarse bracket around the start picks the right basin
    if probe_spread > 0:
        for step_count in (1, 2, 3, 4):
            offset = probe_spread * step_count / 4.0
            for signed in (-offset, offset):
                f_probe = objective(t + signed)
                if f_probe < best_f:
                    best_t, best_f = t + signed, f_probe
        t, f = best_t, best_f
    curvature = None

    def gradient(point, value):
        f_plus = objective(point + gradient_step)
        f_minus = objective(point - gradient_step)
        g = (f_plus - f_minus) / (2.0 * gradient_step)
        # second difference doubles as a free curvature estimate
        h = (f_plus - 2.0 * value + f_minus) / gradient_step**2
        return g, h

    for _ in range(max_iterations):
        g, h = gradient(t, f)
        if g == 0.0:
            break
        scale = curvature if curvature is not None and curvature > 0 else None
        if scale is None:
            scale = h if h > 0 else abs(g)
        step = -g / scale
        # keep single steps within one e-fold of scale change
        step = float(np.clip(step, -1.0, 1.0))

        accepted = False
        alpha = 1.0
        for _ in range(30):
            t_new = t + alpha * step
            f_new = objective(t_new)
            if f_new <= f + 1e-4 * alpha * step * g:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        g_new, _ = gradient(t_new, f_new)
        s = t_new - t
        y = g_new - g
        if s * y > 1e-16:
            curvature = y / s
        t, f = t_new, f_new
        if f < best_f:
            best_t, best_f = t, f
        if abs(s) < tolerance:
            break

    return float(np.exp(best_t))


def sh_fod_to_shore(fod, dirs, zeta, cfg, bvalue=2000.0):
    """Re-express a spherical-harmonic sphere function in the q-space basis.

    Samples the function on the fixed direction set, places every sample
    on the single shell `bvalue` (2000 s/mm^2 by default), and fits the
    expansion at the given scale. Single-shell systems are rank deficient
    in the radial index, so the fit requires the regularization constants
    to be positive.
    """
    if bvalue <= 0:
        raise InvalidArgumentError("bvalue must be positive")
    values = sh.sample_sh(fod, dirs)
    samples = QSpaceSamples(np.full(len(dirs), float(bvalue)), dirs)
    return fit_shore(values, samples, cfg, zeta)


def shore_to_sh(series, dirs, bvalue, max_degree):
    """Spherical-harmonic fit of an expansion restricted to one shell."""
    if bvalue <= 0:
        raise InvalidArgumentError("bvalue must be positive")
    samples = QSpaceSamples(np.full(len(dirs), float(bvalue)), dirs)
    values = reconstruct_signal(series, samples)
    return sh.fit_sh(values, dirs, max_degree, ridge=0.0)
