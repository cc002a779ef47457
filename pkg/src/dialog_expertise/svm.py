"""Linear soft-margin SVM trained with Platt's sequential minimal optimization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import CLASS_ORDER, Label
from .errors import SchemaMismatchError, TrainingError
from .prep import Conditioner, Dataset, apply_conditioner, fit_conditioner


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SmoConfig:
    C: float = 1.0
    kkt_tolerance: float = 1e-3
    alpha_epsilon: float = 1e-12
    max_passes_without_change: int = 10
    max_iterations: int = 100_000
    seed: int = 1
    debug: bool = False

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not (self.kkt_tolerance > 0 and self.alpha_epsilon > 0):
            raise ValueError("tolerances must be positive")
        if self.max_passes_without_change < 1 or self.max_iterations < 1:
            raise ValueError("pass and iteration limits must be >= 1")

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "kkt_tolerance": self.kkt_tolerance,
            "alpha_epsilon": self.alpha_epsilon,
            "max_passes_without_change": self.max_passes_without_change,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
        }


@dataclass(eq=False)
class LinearSvmModel:
    """f(x) = w.x + b on conditioned inputs; Novice -> -1, Expert -> +1."""

    weights: np.ndarray
    bias: float
    alphas: np.ndarray
    C: float
    features: tuple[str, ...]
    conditioner: Conditioner | None = None
    config: SmoConfig = SmoConfig()
    status: str = "converged"
    iterations: int = 0

    kind = "svm"
    class_map = {Label.NOVICE: -1, Label.EXPERT: 1}

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != len(self.features):
            raise SchemaMismatchError(f"expected {len(self.features)} features, got {X.shape[1]}")
        if self.conditioner is not None:
            X = self.conditioner.transform(X)
        return X

    def score_matrix(self, X) -> np.ndarray:
        return self._prepare(X) @ self.weights + self.bias

    def predict_matrix(self, X) -> np.ndarray:
        # f == 0 falls on the Novice side.
        return (self.score_matrix(X) > 0).astype(np.int64)

    def predict_dataset(self, data: Dataset) -> np.ndarray:
        _check(self.features, data.features)
        return self.predict_matrix(data.X)

    def score_dataset(self, data: Dataset) -> np.ndarray:
        _check(self.features, data.features)
        return self.score_matrix(data.X)


def _check(expected, got):
    if tuple(map(str, expected)) != tuple(map(str, got)):
        raise SchemaMismatchError(f"model expects features {list(map(str, expected))}, got {list(map(str, got))}")


def dual_objective(alphas, X, y_pm) -> float:
    """sum(a) - 1/2 ||sum a_i y_i x_i||^2 (linear kernel)."""
    w = (np.asarray(alphas) * y_pm) @ X
    return float(np.sum(alphas) - 0.5 * w @ w)


class _Smo:
    def __init__(self, X, y_pm, config: SmoConfig):
        self.X = X
        self.y = y_pm
        self.C = config.C
        self.tol = config.kkt_tolerance
        self.eps = config.alpha_epsilon
        self.cfg = config
        n, m = X.shape
        self.alpha = np.zeros(n)
        self.w = np.zeros(m)
        self.b = 0.0
        self.f = np.zeros(n)
        self.diag = np.einsum("ij,ij->i", X, X)
        self.rng = np.random.default_rng(config.seed)
        self.steps = 0

    def nonbound(self) -> np.ndarray:
        a = self.alpha
        return np.flatnonzero((a > self.eps) & (a < self.C - self.eps))

    def _endpoint_gain(self, i1, i2, a2_new):
        """Change of the dual objective when alpha[i2] moves to ``a2_new``."""
        y1, y2 = self.y[i1], self.y[i2]
        d2 = a2_new - self.alpha[i2]
        d1 = -y1 * y2 * d2
        dw = y1 * d1 * self.X[i1] + y2 * d2 * self.X[i2]
        return d1 + d2 - self.w @ dw - 0.5 * dw @ dw

    def take_step(self, i1, i2) -> bool:
        if i1 == i2:
            return False
        C, eps = self.C, self.eps
        X, y, alpha = self.X, self.y, self.alpha
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1 = self.f[i1] - y1
        e2 = self.f[i2] - y2
        s = y1 * y2
        if y1 != y2:
            lo, hi = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            lo, hi = max(0.0, a2 + a1 - C), min(C, a2 + a1)
        if hi - lo <= eps:
            return False
        k11, k22 = self.diag[i1], self.diag[i2]
        k12 = X[i1] @ X[i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > eps:
            a2n = min(hi, max(lo, a2 + y2 * (e1 - e2) / eta))
        else:
            # Flat direction (duplicate points): move to the better endpoint.
            g_lo = self._endpoint_gain(i1, i2, lo)
            g_hi = self._endpoint_gain(i1, i2, hi)
            if max(g_lo, g_hi) <= eps:
                return False
            a2n = lo if g_lo > g_hi else hi
        if a2n < eps:
            a2n = 0.0
        elif a2n > C - eps:
            a2n = C
        if abs(a2n - a2) < eps * (a2n + a2 + eps):
            return False
        a1n = min(C, max(0.0, a1 + s * (a2 - a2n)))

        d1 = y1 * (a1n - a1)
        d2 = y2 * (a2n - a2)
        b1 = self.b - e1 - d1 * k11 - d2 * k12
        b2 = self.b - e2 - d1 * k12 - d2 * k22
        if eps < a1n < C - eps:
            b_new = b1
        elif eps < a2n < C - eps:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)

        if self.cfg.debug:
            before = dual_objective(alpha, X, y)
        self.w = self.w + d1 * X[i1] + d2 * X[i2]
        self.b = b_new
        alpha[i1], alpha[i2] = a1n, a2n
        self.f = X @ self.w + self.b
        self.steps += 1
        if self.cfg.debug:
            after = dual_objective(alpha, X, y)
            assert after >= before - 1e-12, f"dual objective decreased: {before} -> {after}"
        return True

    def refit_bias(self) -> bool:
        """With every alpha at a bound, move b to the middle of its KKT interval.

        Pair steps cannot fix a bias left over from the last update, so rows
        would otherwise stay stuck. Returns True when b changed.
        """
        if len(self.nonbound()):
            return False
        g = self.X @ self.w
        y, a = self.y, self.alpha
        below_c = a < self.C - self.eps
        above_0 = a > self.eps
        # y f >= 1 where alpha < C and y f <= 1 where alpha > 0.
        lower = np.concatenate([(1.0 - g)[(y > 0) & below_c], (-1.0 - g)[(y < 0) & above_0]])
        upper = np.concatenate([(1.0 - g)[(y > 0) & above_0], (-1.0 - g)[(y < 0) & below_c]])
        lo = lower.max() if len(lower) else -np.inf
        hi = upper.min() if len(upper) else np.inf
        if np.isinf(lo) and np.isinf(hi):
            return False
        b = hi if np.isinf(lo) else lo if np.isinf(hi) else 0.5 * (lo + hi)
        if b == self.b:
            return False
        self.b = float(b)
        self.f = g + self.b
        return True

    def any_violation(self) -> bool:
        return any(self.violates(i) for i in range(len(self.y)))

    def violates(self, i) -> bool:
        r = (self.f[i] - self.y[i]) * self.y[i]
        a = self.alpha[i]
        return (r < -self.tol and a < self.C - self.eps) or (r > self.tol and a > self.eps)

    def examine(self, i2) -> int:
        if not self.violates(i2):
            return 0
        n = len(self.y)
        nb = self.nonbound()
        if len(nb) > 1:
            e2 = self.f[i2] - self.y[i2]
            e = self.f[nb] - self.y[nb]
            i1 = int(nb[np.argmax(np.abs(e - e2))])
            if self.take_step(i1, i2):
                return 1
        if len(nb):
            for i1 in np.roll(nb, -int(self.rng.integers(len(nb)))):
                if self.take_step(int(i1), i2):
                    return 1
        for i1 in np.roll(np.arange(n), -int(self.rng.integers(n))):
            if self.take_step(int(i1), i2):
                return 1
        return -1  # violator that no partner could move

    def run(self) -> str:
        n = len(self.y)
        examine_all = True
        num_changed = 0
        quiet_sweeps = 0
        while num_changed > 0 or examine_all:
            num_changed = 0
            stuck = 0
            rows = range(n) if examine_all else self.nonbound().tolist()
            for i in rows:
                r = self.examine(i)
                if r > 0:
                    num_changed += 1
                elif r < 0:
                    stuck += 1
                if self.steps >= self.cfg.max_iterations:
                    return "iteration_limit"
            if examine_all:
                if num_changed == 0:
                    if stuck and self.refit_bias():
                        continue
                    quiet_sweeps += 1
                    # With no violators left another sweep cannot change anything.
                    if stuck == 0:
                        break
                    if quiet_sweeps >= self.cfg.max_passes_without_change:
                        return "stalled"
                    continue
                quiet_sweeps = 0
                examine_all = False
            elif num_changed == 0:
                examine_all = True
        return "converged"


def smo_train(train: Dataset, config: SmoConfig = SmoConfig()) -> LinearSvmModel:
    """Solve the soft-margin dual on ``train`` as given (no conditioning applied)."""
    counts = train.class_counts()
    if (counts == 0).any():
        raise TrainingError("SVM training needs rows of both classes")
    X = np.asarray(train.X, dtype=np.float64)
    if np.isnan(X).any():
        raise TrainingError("SVM training data contains missing values; condition it first")
    y_pm = np.where(train.y == 1, 1.0, -1.0)
    solver = _Smo(X, y_pm, config)
    status = solver.run()
    if status != "converged":
        warnings.warn(
            f"SMO stopped ({status}) after {solver.steps} pair updates without meeting the KKT tolerance",
            ConvergenceWarning,
            stacklevel=2,
        )
    return LinearSvmModel(
        weights=solver.w.copy(),
        bias=float(solver.b),
        alphas=solver.alpha.copy(),
        C=config.C,
        features=tuple(train.features),
        config=config,
        status=status,
        iterations=solver.steps,
    )


def train_svm(train: Dataset, config: SmoConfig = SmoConfig()) -> LinearSvmModel:
    """Mean-impute and min-max scale on ``train``, then run SMO; the scaling is kept in the model."""
    conditioner = fit_conditioner(train, normalize=True)
    model = smo_train(apply_conditioner(conditioner, train), config)
    model.conditioner = conditioner
    return model


def _row(model, x) -> np.ndarray:
    from .forest import _vector_row

    return _vector_row(model.features, x)


def decision_value(model: LinearSvmModel, x) -> float:
    return float(model.score_matrix(_row(model, x))[0])


def predict(model: LinearSvmModel, x) -> Label:
    return CLASS_ORDER[int(decision_value(model, x) > 0)]


def kkt_violation(model: LinearSvmModel, train: Dataset) -> float:
    """Largest KKT residual of the trained dual over the training rows."""
    y_pm = np.where(train.y == 1, 1.0, -1.0)
    margin = y_pm * model.score_matrix(train.X)
    a = model.alphas
    eps = model.config.alpha_epsilon
    at_zero = a <= eps
    at_c = a >= model.C - eps
    free = ~(at_zero | at_c)
    viol = np.zeros_like(margin)
    viol[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    viol[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    viol[free] = np.abs(margin[free] - 1.0)
    return float(viol.max()) if len(viol) else 0.0
