"""Feature scaling, staged mini-batch optimization, and two-fold cross-fitting.

The cross-fitting protocol: shuffle once, split in half, train the
propensity side (bottom, factor heads, treatment and outcome nets) of
model A on fold one, then train its sensitivity net on fold two with the
propensity side frozen, so the treatment residuals feeding the causal fit
come from nets that never saw that fold. Model B mirrors the folds.
Predictions average the two models behind one shared scaler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .data import Dataset
from .errors import (
    ConfigError,
    DegenerateFeatureError,
    DimensionError,
    NumericError,
)
from .losses import LossWeights
from .model import ModelConfig, MtdmlModel, forward, uplift
from .nn import AdamState, adam_step, as_matrix

ENSEMBLE_FORMAT = "mtdml-ensemble-v1"


@dataclass
class TrainConfig:
    """Optimization, cross-fitting, and ablation settings."""

    epochs: int = 200
    causal_epochs: int | None = 800
    batch_size: int = 256
    learning_rate: float = 1e-3
    causal_learning_rate: float | None = 3e-3
    seed: int = 0
    lambda_ortho: float = 0.1
    lambda_sens: float = 0.001
    rho: float = 1.9
    folds: int = 2
    mode: str = "crossfit"
    use_ica_disentangle: bool = True
    use_tweedie: bool = True
    patience: int = 40
    hidden_width: int = 64
    rep_dim: int = 16
    hidden_activation: str = "relu"
    sensitivity_hidden: int | None = None
    signs: tuple[int, ...] | None = None
    y_floor: float = model_mod.DEFAULT_Y_FLOOR

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.folds != 2:
            raise ConfigError("exactly two folds are supported")
        if self.mode not in ("crossfit", "joint"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_ortho, self.lambda_sens, self.rho)

    def model_config(self, n_covariates: int, n_treatments: int) -> ModelConfig:
        return ModelConfig(
            n_covariates=n_covariates,
            n_treatments=n_treatments,
            hidden_width=self.hidden_width,
            rep_dim=self.rep_dim,
            hidden_activation=self.hidden_activation,
            sensitivity_hidden=self.sensitivity_hidden,
            use_ica=self.use_ica_disentangle,
            use_tweedie=self.use_tweedie,
            signs=self.signs,
            y_floor=self.y_floor,
        )


@dataclass
class Scaler:
    """Per-covariate standardization fitted on training data."""

    mean: np.ndarray
    std: np.ndarray

    def to_doc(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_doc(cls, doc: dict) -> "Scaler":
        return cls(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            std=np.asarray(doc["std"], dtype=np.float64),
        )


def scaler_fit(x: np.ndarray) -> Scaler:
    x = as_matrix(x)
    if x.shape[0] < 2:
        raise DimensionError("need at least two rows to fit a scaler")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise DegenerateFeatureError(
            f"zero-variance covariate column(s): {dead.tolist()}"
        )
    return Scaler(mean=mean, std=std)


def scaler_apply(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != scaler.mean.size:
        raise DimensionError(
            f"x has {x.shape[1]} columns, scaler expects {scaler.mean.size}"
        )
    return (x - scaler.mean) / scaler.std


def _annealed_rate(lr0: float, epoch: int, n_epochs: int) -> float:
    """Cosine decay from lr0 down to lr0/50 across the epoch budget."""
    if n_epochs <= 1:
        return lr0
    lr_end = lr0 / 50.0
    frac = epoch / (n_epochs - 1)
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + np.cos(np.pi * frac))


def train_stage(
    model: MtdmlModel,
    x: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    stage: str,
    cfg: TrainConfig,
) -> list[float]:
    """Adam over shuffled mini-batches of the stage loss; returns the trace.

    Only the stage's own nets get optimizer states, so frozen parameters
    cannot move. The learning rate follows a cosine anneal so the final
    iterate settles instead of bouncing around the optimum. Stops early
    after `patience` epochs without improvement of the epoch-mean loss.

    The causal stage consumes frozen features, so they are computed once
    for the whole fold and only the sensitivity net runs per batch; the
    arithmetic is identical to the general path.
    """
    x = as_matrix(x)
    n = x.shape[0]
    if n == 0:
        raise DimensionError("training data is empty")
    weights = cfg.loss_weights()
    if stage == "propensity":
        nets = model.propensity_nets()
        n_epochs, lr0 = cfg.epochs, cfg.learning_rate
    elif stage == "causal":
        nets = model.causal_nets()
        n_epochs = cfg.causal_epochs or cfg.epochs
        lr0 = cfg.causal_learning_rate or cfg.learning_rate
    else:
        nets = model.all_nets()
        n_epochs, lr0 = cfg.epochs, cfg.learning_rate
    # Deduplicate (the collapsed-head variant aliases one net three times).
    nets = list(dict.fromkeys(nets))
    states = [AdamState.for_net(net, lr0) for net in nets]

    frozen = None
    if stage == "causal":
        out = model_mod.forward(model, x, t)
        frozen = (
            np.hstack([out.rep_instr, out.rep_conf, out.rep_adj]),
            out.delta_t,
            out.y_base,
        )

    stage_salt = {"propensity": 1, "causal": 2, "joint": 3}[stage]
    rng = np.random.default_rng([cfg.seed, stage_salt])
    trace: list[float] = []
    best = np.inf
    stale = 0
    for epoch in range(n_epochs):
        lr_e = _annealed_rate(lr0, epoch, n_epochs)
        for state in states:
            state.learning_rate = lr_e
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                if frozen is not None:
                    loss = _causal_batch(model, frozen, idx, y[idx], weights)
                else:
                    loss, _ = model_mod.model_loss_and_grads(
                        model, x[idx], t[idx], y[idx], weights, stage
                    )
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch at {start}: {exc}"
                ) from exc
            for net, state in zip(nets, states):
                adam_step(net, state)
            total += loss * idx.size
        epoch_loss = total / n
        trace.append(epoch_loss)
        if epoch_loss < best:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return trace


def _causal_batch(model, frozen, idx, y_batch, weights) -> float:
    """One causal-stage batch against precomputed frozen features."""
    upsilon, delta_t, y_base = frozen
    from . import losses as losses_mod
    from .nn import mlp_backward, mlp_forward

    kappa, cache_k = mlp_forward(model.f_k, upsilon[idx])
    d_t = delta_t[idx]
    y_pre = y_base[idx] + (kappa * d_t) @ model.signs
    y_final = np.maximum(y_pre, model.y_floor)
    if model.config.use_tweedie:
        l_final, g_final = losses_mod.tweedie_nll(y_batch, y_final, weights.rho)
    else:
        l_final, g_final = losses_mod.squared_loss(y_batch, y_final)
    l_kreg = losses_mod.k_reg(kappa)
    d_y_pre = g_final * (y_pre > model.y_floor)
    d_kappa = d_y_pre[:, None] * (model.signs[None, :] * d_t)
    d_kappa += weights.lambda_sens * losses_mod.k_reg_grad(kappa)
    model.f_k.zero_grad()
    mlp_backward(model.f_k, cache_k, d_kappa)
    return losses_mod.total_loss(0.0, 0.0, l_final, 0.0, l_kreg, weights)


@dataclass
class CrossFitEnsemble:
    """Two fold-trained models, a shared scaler, and training diagnostics."""

    model_a: MtdmlModel
    model_b: MtdmlModel
    scaler: Scaler
    fold_of: np.ndarray
    fold_seed: int
    mode: str = "crossfit"
    traces: dict = field(default_factory=dict)

    @property
    def n_treatments(self) -> int:
        return self.model_a.config.n_treatments


@dataclass
class EnsemblePrediction:
    y_final: np.ndarray
    kappa: np.ndarray
    t_hat: np.ndarray
    y_base: np.ndarray


def _fold_assignment(n: int, seed: int) -> np.ndarray:
    """0/1 fold labels; fold 0 gets the extra sample when n is odd."""
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.ones(n, dtype=np.int64)
    fold_of[order[: (n + 1) // 2]] = 0
    return fold_of


def crossfit_train(dataset: Dataset, cfg: TrainConfig) -> CrossFitEnsemble:
    """The two-fold protocol: propensity on one fold, causal on the other."""
    n = dataset.n
    if n < 2 * cfg.batch_size:
        raise ConfigError(
            f"need at least 2*batch_size={2 * cfg.batch_size} samples, got {n}"
        )
    scaler = scaler_fit(dataset.x)
    xs = scaler_apply(scaler, dataset.x)
    fold_of = _fold_assignment(n, cfg.seed)
    idx_a, idx_b = np.flatnonzero(fold_of == 0), np.flatnonzero(fold_of == 1)

    mc = cfg.model_config(dataset.d, dataset.k_t)
    traces: dict[str, list[float]] = {}
    models = []
    for tag, train_idx, causal_idx in (
        ("a", idx_a, idx_b),
        ("b", idx_b, idx_a),
    ):
        m = MtdmlModel(mc, np.random.default_rng(cfg.seed + (0 if tag == "a" else 1)))
        traces[f"model_{tag}/propensity"] = train_stage(
            m, xs[train_idx], dataset.t[train_idx], dataset.y[train_idx],
            "propensity", cfg,
        )
        traces[f"model_{tag}/causal"] = train_stage(
            m, xs[causal_idx], dataset.t[causal_idx], dataset.y[causal_idx],
            "causal", cfg,
        )
        models.append(m)
    return CrossFitEnsemble(
        model_a=models[0],
        model_b=models[1],
        scaler=scaler,
        fold_of=fold_of,
        fold_seed=cfg.seed,
        mode="crossfit",
        traces=traces,
    )


def joint_train(dataset: Dataset, cfg: TrainConfig) -> CrossFitEnsemble:
    """Single model on all data with the combined loss; both slots alias it."""
    scaler = scaler_fit(dataset.x)
    xs = scaler_apply(scaler, dataset.x)
    m = MtdmlModel(cfg.model_config(dataset.d, dataset.k_t),
                   np.random.default_rng(cfg.seed))
    trace = train_stage(m, xs, dataset.t, dataset.y, "joint", cfg)
    return CrossFitEnsemble(
        model_a=m,
        model_b=m,
        scaler=scaler,
        fold_of=np.zeros(dataset.n, dtype=np.int64),
        fold_seed=cfg.seed,
        mode="joint",
        traces={"model/joint": trace},
    )


def train(dataset: Dataset, cfg: TrainConfig) -> CrossFitEnsemble:
    if cfg.mode == "joint":
        return joint_train(dataset, cfg)
    return crossfit_train(dataset, cfg)


def ensemble_predict(
    ensemble: CrossFitEnsemble, x: np.ndarray, t: np.ndarray
) -> EnsemblePrediction:
    """Arithmetic mean of both models' outputs on scaled covariates."""
    xs = scaler_apply(ensemble.scaler, x)
    out_a = forward(ensemble.model_a, xs, t)
    out_b = forward(ensemble.model_b, xs, t)
    return EnsemblePrediction(
        y_final=0.5 * (out_a.y_final + out_b.y_final),
        kappa=0.5 * (out_a.kappa + out_b.kappa),
        t_hat=0.5 * (out_a.t_hat + out_b.t_hat),
        y_base=0.5 * (out_a.y_base + out_b.y_base),
    )


def ensemble_uplift(ensemble, x, t_from, t_to) -> np.ndarray:
    xs = scaler_apply(ensemble.scaler, x)
    return 0.5 * (
        uplift(ensemble.model_a, xs, t_from, t_to)
        + uplift(ensemble.model_b, xs, t_from, t_to)
    )


def ensemble_to_doc(ensemble: CrossFitEnsemble) -> dict:
    scaler_doc = ensemble.scaler.to_doc()
    return {
        "version": ENSEMBLE_FORMAT,
        "mode": ensemble.mode,
        "fold_seed": ensemble.fold_seed,
        "n_samples": int(ensemble.fold_of.size),
        "scaler": scaler_doc,
        "model_a": model_mod.model_to_doc(ensemble.model_a, scaler_doc),
        "model_b": model_mod.model_to_doc(ensemble.model_b, scaler_doc),
    }


def ensemble_from_doc(doc: dict) -> CrossFitEnsemble:
    if doc.get("version") != ENSEMBLE_FORMAT:
        raise ConfigError(
            f"unsupported ensemble document version {doc.get('version')!r}"
        )
    n = int(doc["n_samples"])
    seed = int(doc["fold_seed"])
    mode = doc.get("mode", "crossfit")
    if mode == "joint":
        fold_of = np.zeros(n, dtype=np.int64)
    else:
        fold_of = _fold_assignment(n, seed)
    return CrossFitEnsemble(
        model_a=model_mod.model_from_doc(doc["model_a"]),
        model_b=model_mod.model_from_doc(doc["model_b"]),
        scaler=Scaler.from_doc(doc["scaler"]),
        fold_of=fold_of,
        fold_seed=seed,
        mode=mode,
    )


def save_ensemble(ensemble: CrossFitEnsemble, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ensemble_to_doc(ensemble), fh)


def load_ensemble(path: str) -> CrossFitEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        return ensemble_from_doc(json.load(fh))
