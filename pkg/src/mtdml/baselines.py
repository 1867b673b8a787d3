"""S- and T-learner reference estimators over a binarized treatment.

These are the naive comparators: plain squared-error regressors with no
debiasing machinery, trained with the same optimizer and determinism
contract as the main estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .nn import AdamState, Mlp, MlpSpec, adam_step, as_matrix, mlp_backward, mlp_forward
from .training import Scaler, TrainConfig, _annealed_rate, scaler_apply, scaler_fit


@dataclass
class BaselineModel:
    kind: str                # "S" or "T"
    nets: list[Mlp]          # one net (S) or [control, treated] (T)
    scaler: Scaler


def _fit_regressor(
    spec: MlpSpec, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, seed: int
) -> Mlp:
    """Squared-error regression with mini-batch Adam and cosine anneal."""
    net = Mlp(spec, np.random.default_rng(seed))
    state = AdamState.for_net(net, cfg.learning_rate)
    rng = np.random.default_rng([seed, 17])
    n = x.shape[0]
    best = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        state.learning_rate = _annealed_rate(cfg.learning_rate, epoch, cfg.epochs)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, cache = mlp_forward(net, x[idx])
            resid = pred.ravel() - y[idx]
            loss = float(np.mean(resid * resid))
            mlp_backward(net, cache, (2.0 * resid / idx.size)[:, None])
            adam_step(net, state)
            total += loss * idx.size
        epoch_loss = total / n
        if epoch_loss < best:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return net


def baseline_train(
    kind: str,
    x: np.ndarray,
    treated,
    y: np.ndarray,
    cfg: TrainConfig,
) -> BaselineModel:
    """Fit an S-learner (one net on [x, flag]) or T-learner (one net per arm)."""
    if kind not in ("S", "T"):
        raise ConfigError(f"baseline kind must be 'S' or 'T', got {kind!r}")
    x = as_matrix(x)
    treated = np.asarray(treated).astype(np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    scaler = scaler_fit(x)
    xs = scaler_apply(scaler, x)
    h = cfg.hidden_width
    act = cfg.hidden_activation
    if kind == "S":
        spec = MlpSpec([x.shape[1] + 1, h, 1], [act, "identity"])
        net = _fit_regressor(
            spec, np.hstack([xs, treated[:, None]]), y, cfg, cfg.seed
        )
        nets = [net]
    else:
        flags = treated.astype(bool)
        if not flags.any() or flags.all():
            raise DomainError("T-learner needs both arms non-empty")
        spec = MlpSpec([x.shape[1], h, 1], [act, "identity"])
        net0 = _fit_regressor(spec, xs[~flags], y[~flags], cfg, cfg.seed)
        net1 = _fit_regressor(spec, xs[flags], y[flags], cfg, cfg.seed + 1)
        nets = [net0, net1]
    return BaselineModel(kind=kind, nets=nets, scaler=scaler)


def baseline_tau(model: BaselineModel, x: np.ndarray) -> np.ndarray:
    """Estimated effect of the binary flag: f(x, 1) - f(x, 0) per sample."""
    xs = scaler_apply(model.scaler, x)
    if model.kind == "S":
        ones = np.ones((xs.shape[0], 1))
        f1, _ = mlp_forward(model.nets[0], np.hstack([xs, ones]))
        f0, _ = mlp_forward(model.nets[0], np.hstack([xs, np.zeros_like(ones)]))
        return (f1 - f0).ravel()
    f0, _ = mlp_forward(model.nets[0], xs)
    f1, _ = mlp_forward(model.nets[1], xs)
    return (f1 - f0).ravel()
