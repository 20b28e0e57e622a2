"""Real even-order spherical harmonic basis and the angular correlation metric.

Basis convention (fixed throughout the package): orthonormal real
harmonics over even degrees only, ordered by ascending degree l and,
within each degree, by order m from -l to +l. For m > 0 the function is
sqrt(2) times the real part of the complex harmonic, for m < 0 sqrt(2)
times the imaginary part of the |m| harmonic, and for m = 0 the complex
harmonic itself (which is already real).
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln, lpmv

from .errors import (
    InvalidArgumentError,
    SingularSystemError,
    UndefinedCorrelationError,
)
from .sphere import rotate_directions

CONDITION_LIMIT = 1e12


def _check_even(value, name):
    if value < 0 or value % 2 != 0:
        raise InvalidArgumentError(f"{name} must be a non-negative even integer, got {value}")


def sh_coeff_count(max_degree):
    """Number of real even-degree harmonics up to max_degree: (L+1)(L+2)/2."""
    _check_even(max_degree, "max_degree")
    return (max_degree + 1) * (max_degree + 2) // 2


def sh_degree_order_table(max_degree):
    """Arrays of degree l and order m for each basis column, in basis order."""
    _check_even(max_degree, "max_degree")
    degrees = []
    orders = []
    for l in range(0, max_degree + 1, 2):
        for m in range(-l, l + 1):
            degrees.append(l)
            orders.append(m)
    return np.array(degrees), np.array(orders)


class ShSeries:
    """Coefficients of a real, even-degree spherical harmonic expansion."""

    def __init__(self, max_degree, coeffs):
        _check_even(max_degree, "max_degree")
        c = np.array(coeffs, dtype=float)
        expected = sh_coeff_count(max_degree)
        if c.shape != (expected,):
            raise InvalidArgumentError(
                f"expected {expected} coefficients for degree {max_degree}, got shape {c.shape}"
            )
        c.flags.writeable = False
        self.max_degree = max_degree
        self.coeffs = c

    def degree_mask(self, min_degree):
        degrees, _ = sh_degree_order_table(self.max_degree)
        return degrees >= min_degree

    def __repr__(self):
        return f"ShSeries(max_degree={self.max_degree})"


def eval_sh_basis(dirs, max_degree):
    """Evaluate the real even-degree basis at each direction.

    Returns the design matrix with one row per direction and one column
    per (l, m) in basis order. Built from associated Legendre values
    (scipy's `lpmv`, Condon-Shortley phase included) with the orthonormal
    normalization, so the columns form an orthonormal family under the
    sphere's surface measure.
    """
    _check_even(max_degree, "max_degree")
    v = dirs.vectors
    cos_theta = np.clip(v[:, 2], -1.0, 1.0)
    phi = np.arctan2(v[:, 1], v[:, 0])

    cols = []
    for l in range(0, max_degree + 1, 2):
        for m in range(-l, l + 1):
            am = abs(m)
            norm = np.sqrt(
                (2 * l + 1) / (4.0 * np.pi)
                * np.exp(gammaln(l - am + 1) - gammaln(l + am + 1))
            )
            plm = lpmv(am, l, cos_theta)
            if m == 0:
                cols.append(norm * plm)
            elif m > 0:
                cols.append(np.sqrt(2.0) * norm * plm * np.cos(m * phi))
            else:
                cols.append(np.sqrt(2.0) * norm * plm * np.sin(am * phi))
    return np.stack(cols, axis=1)


def _solve_regularized(design, penalty_diag, rhs, guard):
    """Solve (X'X + s * diag(penalty)) c = X' rhs for one or many rhs columns.

    The penalty is scaled by the mean diagonal of X'X, which makes the
    regularization constants dimensionless: a constant of 1e-8 always
    means "1e-8 relative to the data term" regardless of how the basis
    normalization or the sampling scheme size the design columns.
    `guard` enables the condition check used for unregularized fits.
    """
    normal = design.T @ design
    if penalty_diag is not None:
        normal = normal + float(np.mean(np.diag(normal))) * np.diag(penalty_diag)
    if guard:
        cond = np.linalg.cond(normal)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularSystemError(
                f"normal equations condition {cond:.3e} exceeds {CONDITION_LIMIT:.0e}; "
                "add regularization or more samples"
            )
    try:
        factor = cho_factor(normal)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"normal equations not positive definite: {exc}") from exc
    return cho_solve(factor, design.T @ rhs)


def fit_sh(values, dirs, max_degree, ridge=0.0):
    """Least-squares fit of sphere samples, optionally Laplace-Beltrami damped.

    Minimizes ``|B c - values|^2 + ridge * s * |diag(l(l+1)) c|^2`` with
    s the mean diagonal of the normal matrix (so ridge is dimensionless).
    With ridge 0 the normal equations must be well conditioned (limit
    1e12), otherwise a SingularSystemError is raised.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (len(dirs),):
        raise InvalidArgumentError(
            f"got {values.shape[0] if values.ndim == 1 else values.shape} values "
            f"for {len(dirs)} directions"
        )
    coeffs = fit_sh_many(values[None, :], dirs, max_degree, ridge)
    return ShSeries(max_degree, coeffs[0])


def fit_sh_many(values, dirs, max_degree, ridge=0.0):
    """Fit one series per row of `values`; returns the coefficient matrix."""
    if ridge < 0:
        raise InvalidArgumentError("ridge must be non-negative")
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != len(dirs):
        raise InvalidArgumentError("values must have shape (n_series, n_directions)")
    basis = eval_sh_basis(dirs, max_degree)
    degrees, _ = sh_degree_order_table(max_degree)
    lb = degrees * (degrees + 1)
    penalty = ridge * lb.astype(float) ** 2 if ridge > 0 else None
    coeffs = _solve_regularized(basis, penalty, values.T, guard=(ridge == 0.0))
    return coeffs.T


def sample_sh(series, dirs):
    """Evaluate a series at each direction."""
    return eval_sh_basis(dirs, series.max_degree) @ series.coeffs


def acc(u, v):
    """Angular correlation coefficient of two expansions, in [-1, 1].

    Normalized inner product of the coefficients with the isotropic
    (degree-0) term excluded, so adding a constant to either function
    does not change the result. Both series must carry some anisotropic
    content or the correlation is undefined.
    """
    if u.max_degree != v.max_degree:
        raise InvalidArgumentError(
            f"degree mismatch: {u.max_degree} vs {v.max_degree}"
        )
    mask = u.degree_mask(2)
    uu = u.coeffs[mask]
    vv = v.coeffs[mask]
    nu = np.linalg.norm(uu)
    nv = np.linalg.norm(vv)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedCorrelationError(
            "angular correlation undefined: no coefficients of degree >= 2"
        )
    return float(uu @ vv / (nu * nv))


def rotate_sh(series, rotation, resample_dirs):
    """Rotate a sphere function by sampling and refitting.

    The rotated function g satisfies g(d) = f(R^T d); it is sampled on
    `resample_dirs` and refit at the same maximum degree, so the
    direction set must be at least as large as the coefficient count.
    """
    count = sh_coeff_count(series.max_degree)
    if len(resample_dirs) < count:
        raise InvalidArgumentError(
            f"need at least {count} directions to refit degree {series.max_degree}"
        )
    pulled_back = rotate_directions(resample_dirs, rotation.inverse())
    values = sample_sh(series, pulled_back)
    return fit_sh(values, resample_dirs, series.max_degree, ridge=0.0)
