"""Linear model zoo: OLS, ridge, Bayesian linear regression, Huber, and linear SVR.

All fits are deterministic. Ridge and Bayesian regression are solved through
the regularized normal equations; the intercept, when fitted, is kept out of
the penalty by centering the columns. Huber uses iteratively reweighted least
squares, linear SVR a cyclic (unshuffled) subgradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ColumnMismatchError,
    NonFiniteError,
    ShapeMismatchError,
    SingularSystemError,
)

MODEL_KINDS = ("ols", "ridge", "bayes", "huber", "svr")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "ridge"
    fit_intercept: bool = False
    alpha: float = 850.0            # ridge penalty
    prior_precision: float = 1.0    # bayes: Gaussian prior precision on the weights
    noise_precision: float = 1.0    # bayes: observation noise precision
    delta: float = 1.35             # huber: quadratic/linear crossover on raw residuals
    max_iters: int = 100            # huber IRLS cap
    tol: float = 1e-8               # huber convergence on the weight change
    C: float = 1.0                  # svr: loss weight
    epsilon: float = 0.1            # svr: insensitive-tube half width
    epochs: int = 50                # svr: full passes over the samples
    eta0: float = 0.01              # svr: base step, eta_t = eta0 / (1 + t)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.kind == "ridge" and self.alpha < 0:
            raise ValueError("ridge alpha must be >= 0")
        if self.kind == "bayes" and (self.prior_precision <= 0 or self.noise_precision <= 0):
            raise ValueError("bayes precisions must be > 0")
        if self.kind == "huber" and self.delta <= 0:
            raise ValueError("huber delta must be > 0")
        if self.kind == "svr" and (self.C <= 0 or self.epsilon < 0):
            raise ValueError("svr needs C > 0 and epsilon >= 0")

    @staticmethod
    def ols(fit_intercept: bool = False) -> "ModelSpec":
        return ModelSpec(kind="ols", fit_intercept=fit_intercept)

    @staticmethod
    def ridge(alpha: float = 850.0, fit_intercept: bool = False) -> "ModelSpec":
        return ModelSpec(kind="ridge", alpha=alpha, fit_intercept=fit_intercept)

    @staticmethod
    def bayes(prior_precision: float = 1.0, noise_precision: float = 1.0,
              fit_intercept: bool = False) -> "ModelSpec":
        return ModelSpec(kind="bayes", prior_precision=prior_precision,
                         noise_precision=noise_precision, fit_intercept=fit_intercept)

    @staticmethod
    def huber(delta: float = 1.35, max_iters: int = 100, tol: float = 1e-8,
              fit_intercept: bool = False) -> "ModelSpec":
        return ModelSpec(kind="huber", delta=delta, max_iters=max_iters, tol=tol,
                         fit_intercept=fit_intercept)

    @staticmethod
    def svr(C: float = 1.0, epsilon: float = 0.1, epochs: int = 50, eta0: float = 0.01,
            fit_intercept: bool = False) -> "ModelSpec":
        return ModelSpec(kind="svr", C=C, epsilon=epsilon, epochs=epochs, eta0=eta0,
                         fit_intercept=fit_intercept)

    def label(self) -> str:
        if self.kind == "ols":
            core = "ols"
        elif self.kind == "ridge":
            core = f"ridge(alpha={self.alpha:g})"
        elif self.kind == "bayes":
            core = f"bayes(lambda={self.prior_precision:g},beta={self.noise_precision:g})"
        elif self.kind == "huber":
            core = f"huber(delta={self.delta:g})"
        else:
            core = f"svr(C={self.C:g},eps={self.epsilon:g})"
        return core + ("+b" if self.fit_intercept else "")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "fit_intercept": self.fit_intercept}
        if self.kind == "ridge":
            d["alpha"] = self.alpha
        elif self.kind == "bayes":
            d["prior_precision"] = self.prior_precision
            d["noise_precision"] = self.noise_precision
        elif self.kind == "huber":
            d.update(delta=self.delta, max_iters=self.max_iters, tol=self.tol)
        elif self.kind == "svr":
            d.update(C=self.C, epsilon=self.epsilon, epochs=self.epochs, eta0=self.eta0)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        allowed = {"kind", "fit_intercept", "alpha", "prior_precision", "noise_precision",
                   "delta", "max_iters", "tol", "C", "epsilon", "epochs", "eta0"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown ModelSpec keys: {sorted(unknown)}")
        return ModelSpec(**d)


@dataclass
class TrainedLinearModel:
    weights: np.ndarray
    intercept: float
    spec: ModelSpec
    feature_names: list[str] | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "intercept": float(self.intercept),
            "spec": self.spec.to_dict(),
            "feature_names": self.feature_names,
        }


def _as_matrix(X):
    """Accept a FeatureMatrix or a plain 2-D array; return (values, names or None)."""
    names = getattr(X, "names", None)
    values = getattr(X, "values", X)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeMismatchError(f"X must be 2-D, got shape {values.shape}")
    return values, list(names) if names is not None else None


def _solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularSystemError("normal-equation system is singular") from None
    return np.linalg.solve(A, b)


def _center(X, y, fit_intercept):
    if fit_intercept:
        xm = X.mean(axis=0)
        ym = float(y.mean())
        return X - xm, y - ym, xm, ym
    return X, y, np.zeros(X.shape[1]), 0.0


def _fit_svr(X, y, spec):
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    t = 0
    trace = []
    for _ in range(spec.epochs):
        for i in range(n):
            eta = spec.eta0 / (1.0 + t)
            r = y[i] - X[i] @ w - b
            # per-sample split of the objective: hinge term plus 1/n of the penalty
            g = w / n
            if abs(r) > spec.epsilon:
                s = 1.0 if r > 0 else -1.0
                g = g - (spec.C * s) * X[i]
                if spec.fit_intercept:
                    b += eta * spec.C * s
            w -= eta * g
            t += 1
        resid = y - X @ w - b
        hinge = np.maximum(0.0, np.abs(resid) - spec.epsilon)
        trace.append(float(spec.C * hinge.sum() + 0.5 * (w @ w)))
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("svr weights overflowed; lower eta0")
    return w, b, {"iterations": spec.epochs * n, "objective_trace": trace}


def _fit_huber(X, y, spec):
    n, d = X.shape
    Xc, yc, xm, ym = _center(X, y, spec.fit_intercept)
    w = np.zeros(d)
    iterations = 0
    for iterations in range(1, spec.max_iters + 1):
        r = yc - Xc @ w
        absr = np.abs(r)
        s = np.where(absr <= spec.delta, 1.0, spec.delta / np.maximum(absr, 1e-300))
        Xw = Xc * s[:, None]
        w_new = _solve_spd(Xw.T @ Xc, Xw.T @ yc)
        if not np.all(np.isfinite(w_new)):
            raise NonFiniteError("huber IRLS produced non-finite weights")
        if np.max(np.abs(w_new - w)) < spec.tol:
            w = w_new
            break
        w = w_new
    intercept = ym - xm @ w if spec.fit_intercept else 0.0
    return w, float(intercept), {"iterations": iterations}


def fit(X, y, spec: ModelSpec) -> TrainedLinearModel:
    """Fit one linear model; see ModelSpec for the zoo and hyperparameters."""
    values, names = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = values.shape
    if y.size != n:
        raise ShapeMismatchError(f"X has {n} rows but y has {y.size}")
    if n < 1:
        raise ShapeMismatchError("need at least one training row")

    diagnostics: dict = {}
    if spec.kind in ("ols", "ridge", "bayes"):
        Xc, yc, xm, ym = _center(values, y, spec.fit_intercept)
        A = Xc.T @ Xc
        rhs = Xc.T @ yc
        if spec.kind == "ols" or (spec.kind == "ridge" and spec.alpha == 0.0):
            w = _solve_spd(A, rhs)
        elif spec.kind == "ridge":
            w = _solve_spd(A + spec.alpha * np.eye(d), rhs)
        else:
            lam, beta = spec.prior_precision, spec.noise_precision
            S_inv = beta * A + lam * np.eye(d)
            w = _solve_spd(S_inv, beta * rhs)
            diagnostics["posterior_cov"] = np.linalg.inv(S_inv)
        intercept = float(ym - xm @ w) if spec.fit_intercept else 0.0
        diagnostics["iterations"] = 1
    elif spec.kind == "huber":
        w, intercept, diagnostics = _fit_huber(values, y, spec)
    else:
        w, intercept, diagnostics = _fit_svr(values, y, spec)

    if not (np.all(np.isfinite(w)) and np.isfinite(intercept)):
        raise NonFiniteError("fit produced non-finite parameters")
    resid = y - values @ w - intercept
    diagnostics["residual_norm"] = float(np.linalg.norm(resid))
    return TrainedLinearModel(weights=w, intercept=float(intercept), spec=spec,
                              feature_names=names, diagnostics=diagnostics)


def predict(model: TrainedLinearModel, X) -> np.ndarray:
    """Score rows with a trained model; scores are ranking inputs, not calibrated returns."""
    values, names = _as_matrix(X)
    if model.feature_names is not None and names is not None and names != model.feature_names:
        raise ColumnMismatchError("prediction columns do not match training columns")
    if values.shape[1] != model.weights.size:
        raise ColumnMismatchError(
            f"model has {model.weights.size} weights but X has {values.shape[1]} columns")
    return values @ model.weights + model.intercept
