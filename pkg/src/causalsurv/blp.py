"""Best linear projection of the CATE onto chosen covariates.

Doubly robust scores ``Gamma_i = tau_oob(X_i) + psi_i(tau_oob) / (e(1 - e))``
are regressed on ``(1, A)`` by least squares with sandwich standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import SingularDesignError

HC_TYPES = ("HC0", "HC1", "HC2", "HC3")


@dataclass(frozen=True, eq=False)
class BlpResult:
    beta0: float
    beta: np.ndarray
    std_errs: np.ndarray  # intercept first
    n: int
    terms: tuple[str, ...]
    cov: np.ndarray
    hc: str = "HC3"

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta])

    @property
    def t_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.std_errs

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * norm.sf(np.abs(self.t_values))

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        z = norm.ppf(0.5 + level / 2.0)
        return np.column_stack([self.coef - z * self.std_errs, self.coef + z * self.std_errs])

    def table(self) -> list[tuple]:
        """Rows of ``(term, estimate, std_err, t_value, p_value)``."""
        return list(zip(self.terms, self.coef.tolist(), self.std_errs.tolist(),
                        self.t_values.tolist(), self.p_values.tolist()))


def compute_gamma(model, ds=None) -> np.ndarray:
    """Doubly robust CATE scores for each training sample of a CSF model."""
    if model.method != "csf" or model.nuisances is None:
        raise ValueError("doubly robust scores need a causal survival forest fit on all samples")
    tau = model.predict(oob=True).tau_hat
    e = model.nuisances.e_hat
    if ds is not None and ds.n != tau.size:
        raise ValueError("dataset does not match the model's training data")
    return tau + (model.parts.a - tau * model.parts.b) / (e * (1.0 - e))


def best_linear_projection(gamma, A=None, hc: str = "HC3", names=None) -> BlpResult:
    """OLS of ``gamma`` on ``(1, A)`` with heteroskedasticity-robust errors.

    ``A=None`` (or zero columns) gives the intercept-only fit, whose
    coefficient is the mean of ``gamma``.
    """
    y = np.asarray(gamma, dtype=float).reshape(-1)
    n = y.size
    if A is None:
        A = np.empty((n, 0))
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] != n:
        raise ValueError(f"A has {A.shape[0]} rows, gamma has {n}")
    hc = hc.upper()
    if hc not in HC_TYPES:
        raise ValueError(f"hc must be one of {HC_TYPES}")
    D = np.column_stack([np.ones(n), A])
    k = D.shape[1]
    if n <= k:
        raise SingularDesignError(f"need more than {k} samples, got {n}")
    if np.linalg.matrix_rank(D) < k:
        raise SingularDesignError("design matrix (1, A) is rank deficient")
    Q, R = np.linalg.qr(D)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - D @ coef
    r_inv = np.linalg.inv(R)
    bread = r_inv @ r_inv.T  # (D'D)^{-1}
    lev = np.sum(Q * Q, axis=1)
    if hc == "HC0":
        omega = resid ** 2
    elif hc == "HC1":
        omega = resid ** 2 * n / (n - k)
    else:
        power = 1.0 if hc == "HC2" else 2.0
        denom = np.clip(1.0 - lev, 0.0, None) ** power
        with np.errstate(divide="ignore", invalid="ignore"):
            omega = np.where(resid == 0.0, 0.0, resid ** 2 / denom)
    meat = (D * omega[:, None]).T @ D
    cov = bread @ meat @ bread
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if names is None:
        names = [f"A{j + 1}" for j in range(A.shape[1])]
    terms = ("(Intercept)",) + tuple(names)
    return BlpResult(float(coef[0]), coef[1:], se, n, terms, cov, hc)


def naive_projection(tau_hat, A=None, hc: str = "HC3", names=None) -> BlpResult:
    """Regression of plug-in CATE estimates on ``A`` with no robustness correction."""
    return best_linear_projection(tau_hat, A, hc=hc, names=names)
