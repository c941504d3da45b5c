"""One-way multivariate analysis of (co)variance with Wilks' Lambda.

Group effects are tested with Rao's F approximation, which is exact when
there are two groups or at most two dependent variables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc

from .errors import InsufficientData, SingularErrorMatrix

ALPHA = 0.05
_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class WilksResult:
    wilks_lambda: float
    f_stat: float
    df1: float
    df2: float
    p_value: float
    n: int
    n_groups: int
    n_vars: int
    n_covariates: int = 0

    def to_dict(self):
        return asdict(self)


def f_sf(f, df1, df2):
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f <= 0:
        return 1.0
    if not math.isfinite(f):
        return 0.0
    return float(betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))


def _logdet(m, label):
    """log det of a symmetric PSD matrix, rejecting (near-)singular ones.

    Singularity is judged relative to the diagonal (Hadamard bound), so the
    check does not depend on the units of the variables.
    """
    diag = np.diag(m)
    if np.any(diag <= 0):
        raise SingularErrorMatrix(f"{label} has a zero-variance direction")
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0 or logdet - np.sum(np.log(diag)) < math.log(_SINGULAR_RTOL):
        raise SingularErrorMatrix(f"{label} is singular relative to its scale")
    return logdet


def _residualize(y, covariates):
    design = np.column_stack([np.ones(len(y)), covariates])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    rank = np.linalg.matrix_rank(design)
    # keep the grand mean: only the covariate part is removed
    return y - design @ coef + y.mean(axis=0), rank - 1


def rao_f(wilks_lambda, p, df_hyp, df_err):
    """Rao's F approximation for Wilks' Lambda; returns (F, df1, df2)."""
    denom = p * p + df_hyp * df_hyp - 5
    t = math.sqrt((p * p * df_hyp * df_hyp - 4) / denom) if denom > 0 else 1.0
    df1 = p * df_hyp
    w = df_err + df_hyp - (p + df_hyp + 1) / 2.0
    df2 = w * t - (p * df_hyp - 2) / 2.0
    root = wilks_lambda ** (1.0 / t)
    f = (1.0 - root) / root * df2 / df1
    return max(f, 0.0), df1, df2


def wilks_manova(observations, groups, covariates=None) -> WilksResult:
    """Test whether group mean vectors differ.

    ``observations`` is (n, p); ``groups`` holds one label per row. With
    ``covariates`` (n, q) the dependent variables are first residualized on
    them by least squares, and the error degrees of freedom shrink by the
    rank the covariates contribute.
    """
    y = np.asarray(observations, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    groups = np.asarray(groups)
    n, p = y.shape
    if len(groups) != n:
        raise InsufficientData("one group label per observation is required")
    labels, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    g = len(labels)
    if g < 2 or counts.min() < 2:
        raise InsufficientData("need at least two groups with two rows each")

    q = 0
    if covariates is not None:
        cov = np.asarray(covariates, dtype=np.float64).reshape(n, -1)
        y, q = _residualize(y, cov)
    if n <= p + q + g:
        raise InsufficientData(f"n={n} too small for p={p}, q={q}, groups={g}")

    grand = y.mean(axis=0)
    e = np.zeros((p, p))
    h = np.zeros((p, p))
    for k in range(g):
        yk = y[inverse == k]
        mk = yk.mean(axis=0)
        dk = yk - mk
        e += dk.T @ dk
        diff = (mk - grand)[:, None]
        h += len(yk) * (diff @ diff.T)

    lam = math.exp(_logdet(e, "error matrix") - _logdet(e + h, "total matrix"))
    lam = min(lam, 1.0)
    df_hyp = g - 1
    df_err = n - g - q
    f, df1, df2 = rao_f(lam, p, df_hyp, df_err)
    return WilksResult(lam, f, float(df1), float(df2), min(max(f_sf(f, df1, df2), 0.0), 1.0), n, g, p, q)


def verdict(p_value, alpha=ALPHA):
    return "reject" if p_value < alpha else "fail to reject"


def device_difference_report(phone_rows, watch_rows, sensor: str = "accel", alpha: float = ALPHA):
    """Compare phone and watch readings of one sensor type.

    Returns the :class:`WilksResult` and a short human-readable summary.
    """
    phone = np.asarray(phone_rows, dtype=np.float64)
    watch = np.asarray(watch_rows, dtype=np.float64)
    if len(phone) == 0 or len(watch) == 0:
        raise InsufficientData("both devices need at least one row")
    if phone.shape[1:] != watch.shape[1:]:
        raise InsufficientData(f"dimension mismatch: phone {phone.shape[1:]}, watch {watch.shape[1:]}")
    obs = np.vstack([phone, watch])
    groups = np.array(["phone"] * len(phone) + ["watch"] * len(watch))
    res = wilks_manova(obs, groups)
    decision = verdict(res.p_value, alpha)
    text = (
        f"{sensor}: Wilks' lambda = {res.wilks_lambda:.6g}, "
        f"F({res.df1:g}, {res.df2:g}) = {res.f_stat:.6g}, p = {res.p_value:.4g}; "
        f"{decision} the null hypothesis of equal phone/watch means at alpha = {alpha}"
    )
    return res, text
