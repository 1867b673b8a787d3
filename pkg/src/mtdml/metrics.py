"""Evaluation metrics, the binarized evaluation view, and uplift curves.

Conventions are frozen here because they vary across libraries:

  * Qini: sort by score descending (ties broken by ascending original
    index), accumulate Q(p) = Y_T(p) - Y_C(p) * N_T(p)/N_C(p) over
    prefixes, take the trapezoid area over p = 0..N, subtract the area of
    the chord from (0, 0) to (N, Q(N)), divide by N.
  * Policy risk: one minus the normalized expected outcome under the
    policy, where each sample receives its chosen arm's ground-truth mean
    and the normalizer is the largest arm mean; computable only on data
    with known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .data import Dataset, true_contrast, true_mean
from .errors import CapabilityError, DimensionError, DomainError


@dataclass
class MetricsReport:
    """Metric values; fields stay None when inputs lack what they need."""

    pehe: float | None = None
    eps_ate: float | None = None
    eps_att: float | None = None
    policy_risk: float | None = None
    qini_auuc: float | None = None
    pcoc: float | None = None
    n_evaluated: int = 0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class BinaryEvalView:
    """Per-sample uplift scores with a binarized treated/control split."""

    score: np.ndarray
    treated: np.ndarray
    y: np.ndarray
    dim: int
    threshold: float
    delta: float


def pehe(tau_hat, tau_true) -> float:
    """Root mean squared error between estimated and true unit effects."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64).ravel()
    tau_true = np.asarray(tau_true, dtype=np.float64).ravel()
    if tau_hat.shape != tau_true.shape or tau_hat.size == 0:
        raise DimensionError("effect vectors must be equal-length and non-empty")
    return float(np.sqrt(np.mean((tau_hat - tau_true) ** 2)))


def eps_ate(tau_hat, tau_true) -> float:
    """Absolute error of the average effect."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64).ravel()
    tau_true = np.asarray(tau_true, dtype=np.float64).ravel()
    if tau_hat.shape != tau_true.shape or tau_hat.size == 0:
        raise DimensionError("effect vectors must be equal-length and non-empty")
    return float(abs(tau_hat.mean() - tau_true.mean()))


def eps_att(tau_hat, tau_true, treated) -> float:
    """Absolute error of the average effect over the treated subset."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64).ravel()
    tau_true = np.asarray(tau_true, dtype=np.float64).ravel()
    treated = np.asarray(treated).astype(bool).ravel()
    if not (tau_hat.shape == tau_true.shape == treated.shape):
        raise DimensionError("inputs must be equal-length")
    if not treated.any():
        raise DomainError("no treated samples")
    return float(abs(tau_hat[treated].mean() - tau_true[treated].mean()))


def policy_risk(policy, mu1, mu0) -> float:
    """Regret-style risk of following the policy, normalized to [0, 1]."""
    policy = np.asarray(policy).astype(bool).ravel()
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    mu0 = np.asarray(mu0, dtype=np.float64).ravel()
    if not (policy.shape == mu1.shape == mu0.shape) or policy.size == 0:
        raise DimensionError("inputs must be equal-length and non-empty")
    y_scale = max(mu1.max(), mu0.max())
    if y_scale <= 0:
        raise DomainError("arm means must contain a positive value")
    value = np.mean(np.where(policy, mu1, mu0)) / y_scale
    return float(1.0 - value)


def _qini_cumulative(view: BinaryEvalView) -> np.ndarray:
    """Q(p) for p = 0..N under the frozen ordering convention."""
    treated = view.treated.astype(bool)
    if treated.all() or not treated.any():
        raise CapabilityError("both arms must be non-empty")
    # Stable sort on -score keeps ties in ascending original index order.
    order = np.argsort(-view.score, kind="stable")
    tr = treated[order]
    y = view.y[order]
    y_t = np.cumsum(np.where(tr, y, 0.0))
    y_c = np.cumsum(np.where(tr, 0.0, y))
    n_t = np.cumsum(tr)
    n_c = np.cumsum(~tr)
    q = np.where(n_c > 0, y_t - y_c * (n_t / np.maximum(n_c, 1)), y_t)
    return np.concatenate([[0.0], q])


def qini_auuc(view: BinaryEvalView) -> float:
    """Area between the cumulative uplift curve and the random chord."""
    q = _qini_cumulative(view)
    n = q.size - 1
    area = float(np.sum((q[:-1] + q[1:]) / 2.0))
    chord = n * q[-1] / 2.0
    return (area - chord) / n


def uplift_curve(view: BinaryEvalView) -> list[tuple[float, float]]:
    """(fraction targeted, Q) points; trapezoids over them recover the Qini."""
    q = _qini_cumulative(view)
    n = q.size - 1
    return [(p / n, float(q[p])) for p in range(n + 1)]


def pcoc(y_hat, y) -> float:
    """Mean predicted outcome over mean observed outcome (1 = calibrated)."""
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.shape != y.shape or y.size == 0:
        raise DimensionError("vectors must be equal-length and non-empty")
    denom = y.mean()
    if denom <= 0:
        raise DomainError("mean observed outcome must be positive")
    return float(y_hat.mean() / denom)


@dataclass
class EvalSettings:
    """How to binarize and which counterfactual contrast scores samples."""

    dim: int = 0
    threshold: float = 0.0
    delta: float = 1.0
    t_base: tuple[float, ...] | None = None

    def contrast(self, k_t: int) -> tuple[np.ndarray, np.ndarray]:
        base = (
            np.zeros(k_t)
            if self.t_base is None
            else np.asarray(self.t_base, dtype=np.float64)
        )
        if base.shape != (k_t,):
            raise DimensionError(f"t_base must have length {k_t}")
        if not 0 <= self.dim < k_t:
            raise DomainError(f"binarize dim {self.dim} out of range for {k_t} dims")
        target = base.copy()
        target[self.dim] += self.delta
        return base, target


def binarize(dataset: Dataset, settings: EvalSettings, ensemble) -> BinaryEvalView:
    """Score every sample with the configured contrast; flag by threshold.

    A degenerate threshold can leave one arm empty; the view is still
    built, and arm-dependent metrics reject it downstream.
    """
    from .training import ensemble_uplift  # local import to avoid a cycle

    t_base, t_target = settings.contrast(dataset.k_t)
    score = ensemble_uplift(ensemble, dataset.x, t_base, t_target)
    treated = dataset.t[:, settings.dim] > settings.threshold
    return BinaryEvalView(
        score=score,
        treated=treated,
        y=dataset.y,
        dim=settings.dim,
        threshold=settings.threshold,
        delta=settings.delta,
    )


def build_report(
    ensemble, dataset: Dataset, settings: EvalSettings | None = None
) -> tuple[MetricsReport, list[tuple[float, float]] | None]:
    """All metrics the data supports, plus the uplift curve when defined.

    Ground-truth metrics appear only when the dataset carries truth
    columns; Qini needs both arms non-empty; PCOC needs a positive mean
    outcome. Anything unavailable is reported as None.
    """
    from .training import ensemble_predict  # local import to avoid a cycle

    settings = settings or EvalSettings()
    view = binarize(dataset, settings, ensemble)
    t_base, t_target = settings.contrast(dataset.k_t)

    report = MetricsReport(n_evaluated=dataset.n)
    if dataset.truth is not None:
        tau_true, _ = true_contrast(dataset, t_base, t_target)
        report.pehe = pehe(view.score, tau_true)
        report.eps_ate = eps_ate(view.score, tau_true)
        if view.treated.any():
            report.eps_att = eps_att(view.score, tau_true, view.treated)
        mu1 = true_mean(dataset, t_target)
        mu0 = true_mean(dataset, t_base)
        report.policy_risk = policy_risk(view.score > 0, mu1, mu0)
    try:
        report.qini_auuc = qini_auuc(view)
        curve = uplift_curve(view)
    except CapabilityError:
        curve = None
    try:
        pred = ensemble_predict(ensemble, dataset.x, dataset.t)
        report.pcoc = pcoc(pred.y_final, dataset.y)
    except DomainError:
        pass
    return report, curve


def report_to_json(report: MetricsReport) -> str:
    import json

    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def curve_to_csv(curve: list[tuple[float, float]]) -> str:
    lines = ["fraction,qini"]
    for frac, q in curve:
        lines.append(f"{frac!r},{q!r}")
    return "\n".join(lines) + "\n"
