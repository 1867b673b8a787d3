"""Synthetic confounded data with known ground truth, plus CSV ingestion.

The generator draws covariates in three index blocks (instrumental,
confounder, adjustment), builds treatments from the instrumental and
confounder blocks, and an outcome mean from the confounder and adjustment
blocks, so treatment and outcome are confounded exactly through the shared
block. Outcomes are sampled from an exact Tweedie law via its compound
Poisson-Gamma construction, which gives closed-form checks:
E[y] = mu and P(y = 0) = exp(-lambda) with lambda = mu^(2-rho)/(phi*(2-rho)).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConfigError, CsvFormatError
from .nn import softplus

EFFECT_KINDS = ("constant", "linear", "grouped")

MU_FLOOR = 0.01
MU0_OFFSET = 0.1

# Ranges for the fixed random coefficient vectors. All-positive entries make
# the confounding direction consistent: higher shared-block covariates raise
# both the treatments and the baseline outcome, so a naive regression of y
# on t is biased upward by construction.
_W_RANGE = (0.2, 0.45)   # treatment weights on the instrumental+confounder block
_U_RANGE = (0.3, 0.8)    # baseline-outcome weights on the confounder+adjustment block
_V_RANGE = (0.3, 0.8)    # heterogeneous-effect weights (effect_kind="linear")


@dataclass
class DgpConfig:
    """Synthetic data-generating-process parameters."""

    n: int = 20000
    d_instr: int = 3
    d_conf: int = 4
    d_adj: int = 3
    k_t: int = 2
    gamma: float = 1.0
    effect_kind: str = "constant"
    effect_c: float = 0.5
    slope_hi: float = 1.0
    slope_lo: float = 0.2
    rho_dgp: float = 1.5
    phi: float = 1.0
    sigma_t: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k_t < 1 or self.d_conf < 1:
            raise ConfigError("n, k_t, and the confounder count must be >= 1")
        if self.d_instr < 0 or self.d_adj < 0:
            raise ConfigError("covariate block sizes must be >= 0")
        if self.gamma < 0:
            raise ConfigError("confounding strength must be >= 0")
        if self.effect_kind not in EFFECT_KINDS:
            raise ConfigError(f"unknown effect kind {self.effect_kind!r}")
        if not 1.0 < self.rho_dgp < 2.0:
            raise ConfigError("rho_dgp must lie in (1, 2)")
        if self.phi <= 0:
            raise ConfigError("dispersion phi must be positive")
        if self.sigma_t <= 0:
            raise ConfigError("treatment noise std must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def d(self) -> int:
        return self.d_instr + self.d_conf + self.d_adj

    @classmethod
    def from_dict(cls, doc: dict) -> "DgpConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown DGP config keys: {sorted(extra)}")
        return cls(**doc)


@dataclass
class Truth:
    """Ground-truth pieces sufficient to evaluate the outcome mean."""

    kappa: np.ndarray  # N x K_t, per-sample true sensitivities, >= 0
    mu0: np.ndarray    # N, baseline mean at zero effective treatment


@dataclass
class Dataset:
    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    truth: Truth | None = None
    roles: tuple[int, int, int] | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def k_t(self) -> int:
        return self.t.shape[1]


def true_mean(dataset: Dataset, t: np.ndarray) -> np.ndarray:
    """Ground-truth outcome mean for every sample at treatment levels t.

    Effects enter linearly with non-negative sensitivities, and the mean
    is floored at a small positive value, so it is non-decreasing in every
    treatment dimension and always a valid Tweedie mean. t may be a single
    K_t vector (applied to all samples) or an N x K_t matrix.
    """
    if dataset.truth is None:
        raise CapabilityError("dataset carries no ground truth")
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        t = np.broadcast_to(t, (dataset.n, t.size))
    mu = dataset.truth.mu0 + np.sum(dataset.truth.kappa * t, axis=1)
    return np.maximum(mu, MU_FLOOR)


def generate_synthetic(cfg: DgpConfig) -> Dataset:
    """Draw a dataset (with truth attached) from the configured process."""
    rng = np.random.default_rng(cfg.seed)
    d_ic = cfg.d_instr + cfg.d_conf
    d_ca = cfg.d_conf + cfg.d_adj

    w = rng.uniform(*_W_RANGE, size=(cfg.k_t, d_ic))
    v = rng.uniform(*_V_RANGE, size=(cfg.k_t, d_ca))
    u = rng.uniform(*_U_RANGE, size=d_ca)

    x = rng.standard_normal((cfg.n, cfg.d))
    x_ic = x[:, :d_ic]
    x_ca = x[:, cfg.d_instr :]

    eps_t = rng.standard_normal((cfg.n, cfg.k_t))
    t = cfg.gamma * (x_ic @ w.T) / np.sqrt(d_ic) + cfg.sigma_t * eps_t

    if cfg.effect_kind == "constant":
        kappa = np.full((cfg.n, cfg.k_t), cfg.effect_c)
    elif cfg.effect_kind == "linear":
        kappa = softplus(x_ca @ v.T / np.sqrt(d_ca))
    else:  # grouped: slope by the sign of the first confounder covariate
        hi = x[:, cfg.d_instr] >= 0
        kappa = np.where(hi[:, None], cfg.slope_hi, cfg.slope_lo) * np.ones(
            (cfg.n, cfg.k_t)
        )

    mu0 = softplus(x_ca @ u / np.sqrt(d_ca)) + MU0_OFFSET
    mu = np.maximum(mu0 + np.sum(kappa * t, axis=1), MU_FLOOR)

    # Exact Tweedie draw: Poisson number of Gamma lumps.
    rho, phi = cfg.rho_dgp, cfg.phi
    lam = mu ** (2.0 - rho) / (phi * (2.0 - rho))
    gamma_shape = (2.0 - rho) / (rho - 1.0)
    gamma_scale = phi * (rho - 1.0) * mu ** (rho - 1.0)
    counts = rng.poisson(lam)
    y = np.zeros(cfg.n)
    hit = counts > 0
    y[hit] = rng.gamma(counts[hit] * gamma_shape, gamma_scale[hit])

    return Dataset(
        x=x,
        t=t,
        y=y,
        truth=Truth(kappa=kappa, mu0=mu0),
        roles=(cfg.d_instr, cfg.d_conf, cfg.d_adj),
    )


def expected_zero_fraction(dataset: Dataset, cfg: DgpConfig) -> float:
    """Ground-truth P(y=0) averaged over the sample: mean of exp(-lambda)."""
    mu = true_mean(dataset, dataset.t)
    lam = mu ** (2.0 - cfg.rho_dgp) / (cfg.phi * (2.0 - cfg.rho_dgp))
    return float(np.mean(np.exp(-lam)))


def true_contrast(
    dataset: Dataset, t_from: np.ndarray, t_to: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-sample true effect of moving t_from -> t_to, and its mean."""
    if dataset.truth is None:
        raise CapabilityError("dataset carries no ground truth")
    t_from = np.asarray(t_from, dtype=np.float64).ravel()
    t_to = np.asarray(t_to, dtype=np.float64).ravel()
    if t_from.shape != (dataset.k_t,) or t_to.shape != (dataset.k_t,):
        raise CapabilityError(
            f"contrast vectors must have length {dataset.k_t}"
        )
    tau = dataset.truth.kappa @ (t_to - t_from)
    return tau, float(tau.mean())


def _float_cell(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise CsvFormatError(
            f"row {row}, column {col!r}: not a number: {raw!r}"
        ) from None


def load_csv(path: str) -> Dataset:
    """Read a dataset from CSV; truth columns are optional.

    Required columns: x_0..x_{D-1}, t_0..t_{K-1}, y. Optional:
    kappa_true_0..kappa_true_{K-1} and mu0_true (all or none, to form a
    usable truth record).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("file is empty (no header row)") from None
        rows = list(reader)

    def block(prefix: str) -> list[str]:
        cols = [c for c in header if c.startswith(prefix)]
        expected = [f"{prefix}{i}" for i in range(len(cols))]
        if cols and sorted(cols) != sorted(expected):
            raise CsvFormatError(
                f"columns with prefix {prefix!r} must be contiguous from 0"
            )
        return expected

    x_cols = block("x_")
    t_cols = block("t_")
    if not x_cols:
        raise CsvFormatError("missing covariate columns 'x_0'..")
    if not t_cols:
        raise CsvFormatError("missing treatment columns 't_0'..")
    if "y" not in header:
        raise CsvFormatError("missing required column 'y'")
    kappa_cols = block("kappa_true_")
    has_truth = bool(kappa_cols) and "mu0_true" in header
    pos = {name: header.index(name) for name in header}

    n = len(rows)
    x = np.empty((n, len(x_cols)))
    t = np.empty((n, len(t_cols)))
    y = np.empty(n)
    kappa = np.empty((n, len(kappa_cols))) if has_truth else None
    mu0 = np.empty(n) if has_truth else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise CsvFormatError(
                f"row {r}: expected {len(header)} cells, found {len(row)}"
            )
        for j, name in enumerate(x_cols):
            x[r, j] = _float_cell(row[pos[name]], r, name)
        for j, name in enumerate(t_cols):
            t[r, j] = _float_cell(row[pos[name]], r, name)
        y[r] = _float_cell(row[pos["y"]], r, "y")
        if y[r] < 0:
            raise CsvFormatError(f"row {r}, column 'y': negative outcome {y[r]}")
        if has_truth:
            for j, name in enumerate(kappa_cols):
                kappa[r, j] = _float_cell(row[pos[name]], r, name)
            mu0[r] = _float_cell(row[pos["mu0_true"]], r, "mu0_true")

    truth = Truth(kappa=kappa, mu0=mu0) if has_truth else None
    return Dataset(x=x, t=t, y=y, truth=truth)


def save_csv(dataset: Dataset, path: str) -> None:
    """Write the dataset (and truth, when present) with round-trip floats."""
    header = (
        [f"x_{i}" for i in range(dataset.d)]
        + [f"t_{k}" for k in range(dataset.k_t)]
        + ["y"]
    )
    if dataset.truth is not None:
        header += [f"kappa_true_{k}" for k in range(dataset.k_t)] + ["mu0_true"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = (
                [repr(float(val)) for val in dataset.x[i]]
                + [repr(float(val)) for val in dataset.t[i]]
                + [repr(float(dataset.y[i]))]
            )
            if dataset.truth is not None:
                row += [repr(float(val)) for val in dataset.truth.kappa[i]]
                row.append(repr(float(dataset.truth.mu0[i])))
            writer.writerow(row)
