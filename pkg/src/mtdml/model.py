"""The multi-treatment debiased network with a monotone causal head.

Architecture: a shared bottom encodes covariates, three factor heads split
the encoding into instrumental / confounder / adjustment representations,
and three task nets consume them:

  * f_t  predicts the treatment vector from (instrumental, confounder);
  * f_y  predicts the baseline outcome from (confounder, adjustment)
    through an exponential link, so it is always positive;
  * f_k  predicts per-dimension sensitivities from all three factors
    through a softplus output, so they are always non-negative.

The final prediction adds a signed linear term in the treatment residual:
y_final = max(y_base + sum_k signs_k * kappa_k * delta_t_k, y_floor). The
sensitivities are non-negative by construction, so y_final is monotone in
each residual dimension along its configured sign, for any parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import losses
from .errors import DimensionError, DomainError, NumericError
from .nn import Mlp, MlpSpec, as_matrix, mlp_backward, mlp_forward

EXP_CLAMP = 30.0

# Lower bound on the final prediction. Deep floors are poisonous under the
# Tweedie objective: the loss at the floor grows like floor^(1-rho), so a
# handful of clamped samples with positive outcomes would dominate every
# batch. 0.01 keeps the loss bounded while remaining far below any
# realistic outcome scale.
DEFAULT_Y_FLOOR = 0.01

MODEL_FORMAT = "mtdml-model-v1"

STAGES = ("propensity", "causal", "joint")


@dataclass
class ModelConfig:
    """Architecture sizes and switches for one network."""

    n_covariates: int
    n_treatments: int
    hidden_width: int = 64
    rep_dim: int = 16
    hidden_activation: str = "relu"
    # Hidden width of the sensitivity net; None keeps it a single softplus
    # layer over the representations, which fits far more smoothly through
    # the low-signal residual channel.
    sensitivity_hidden: int | None = None
    use_ica: bool = True
    use_tweedie: bool = True
    signs: tuple[int, ...] | None = None
    y_floor: float = DEFAULT_Y_FLOOR


@dataclass
class ForwardOutput:
    """Per-batch tensors produced by the full forward pass."""

    rep_instr: np.ndarray
    rep_conf: np.ndarray
    rep_adj: np.ndarray
    t_hat: np.ndarray
    y_base: np.ndarray
    kappa: np.ndarray
    delta_t: np.ndarray
    y_final: np.ndarray


class MtdmlModel:
    """Holds the component nets plus the monotone-direction signs."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d, k = config.n_covariates, config.n_treatments
        h, r = config.hidden_width, config.rep_dim
        act = config.hidden_activation
        self.config = config
        self.bottom = Mlp(MlpSpec([d, h], [act]), rng)
        if config.use_ica:
            self.head_instr = Mlp(MlpSpec([h, r], [act]), rng)
            self.head_conf = Mlp(MlpSpec([h, r], [act]), rng)
            self.head_adj = Mlp(MlpSpec([h, r], [act]), rng)
        else:
            shared = Mlp(MlpSpec([h, r], [act]), rng)
            self.head_instr = self.head_conf = self.head_adj = shared
        self.f_t = Mlp(MlpSpec([2 * r, h // 2, k], [act, "identity"]), rng)
        self.f_y = Mlp(MlpSpec([2 * r, h // 2, 1], [act, "identity"]), rng)
        if config.sensitivity_hidden is None:
            self.f_k = Mlp(MlpSpec([3 * r, k], ["softplus"]), rng)
        else:
            self.f_k = Mlp(
                MlpSpec([3 * r, config.sensitivity_hidden, k], [act, "softplus"]),
                rng,
            )
        if config.signs is None:
            self.signs = np.ones(k)
        else:
            self.signs = np.asarray(config.signs, dtype=np.float64)
        if self.signs.shape != (k,) or not np.all(np.abs(self.signs) == 1.0):
            raise DomainError("signs must be a vector of +1/-1 per treatment dim")
        self.y_floor = float(config.y_floor)
        self.exp_clamp_count = 0

    def heads(self) -> list[tuple[str, Mlp]]:
        if self.config.use_ica:
            return [
                ("head_instr", self.head_instr),
                ("head_conf", self.head_conf),
                ("head_adj", self.head_adj),
            ]
        return [("head_shared", self.head_instr)]

    def propensity_nets(self) -> list[Mlp]:
        return [self.bottom] + [m for _, m in self.heads()] + [self.f_t, self.f_y]

    def causal_nets(self) -> list[Mlp]:
        return [self.f_k]

    def all_nets(self) -> list[Mlp]:
        return self.propensity_nets() + self.causal_nets()

    def named_nets(self) -> list[tuple[str, Mlp]]:
        return (
            [("bottom", self.bottom)]
            + self.heads()
            + [("f_t", self.f_t), ("f_y", self.f_y), ("f_k", self.f_k)]
        )

    def zero_grad(self) -> None:
        for net in self.all_nets():
            net.zero_grad()


def disentangle(model: MtdmlModel, x: np.ndarray):
    """Covariates -> (instrumental, confounder, adjustment) representations."""
    out = _disentangle_cached(model, x)
    return out[0], out[1], out[2]


def _disentangle_cached(model: MtdmlModel, x: np.ndarray):
    x = as_matrix(x)
    if x.shape[1] != model.config.n_covariates:
        raise DimensionError(
            f"x has {x.shape[1]} columns, model expects {model.config.n_covariates}"
        )
    shared, cache_bottom = mlp_forward(model.bottom, x)
    rep_i, cache_i = mlp_forward(model.head_instr, shared)
    if model.config.use_ica:
        rep_c, cache_c = mlp_forward(model.head_conf, shared)
        rep_a, cache_a = mlp_forward(model.head_adj, shared)
    else:
        rep_c, cache_c = rep_i, cache_i
        rep_a, cache_a = rep_i, cache_i
    return rep_i, rep_c, rep_a, cache_bottom, cache_i, cache_c, cache_a


def predict_treatment(model, rep_instr, rep_conf) -> np.ndarray:
    t_hat, _ = mlp_forward(model.f_t, np.hstack([rep_instr, rep_conf]))
    return t_hat


def predict_outcome(model, rep_conf, rep_adj) -> np.ndarray:
    """Positive baseline outcome via the exponential link."""
    raw, _ = mlp_forward(model.f_y, np.hstack([rep_conf, rep_adj]))
    return _exp_link(model, raw.ravel())


def _exp_link(model: MtdmlModel, raw: np.ndarray) -> np.ndarray:
    clipped = np.clip(raw, -EXP_CLAMP, EXP_CLAMP)
    n_clamped = int(np.sum(clipped != raw))
    if n_clamped:
        model.exp_clamp_count += n_clamped
    return np.exp(clipped)


def predict_sensitivity(model, rep_instr, rep_conf, rep_adj) -> np.ndarray:
    """Non-negative per-dimension sensitivities (softplus output layer)."""
    kappa, _ = mlp_forward(model.f_k, np.hstack([rep_instr, rep_conf, rep_adj]))
    return kappa


def monotonic_head(kappa, delta_t, signs, y_base, y_floor: float) -> np.ndarray:
    """max(y_base + sum_k signs_k * kappa_k * delta_t_k, y_floor).

    With kappa >= 0 this is non-decreasing in each sign-aligned residual
    dimension; taking the max with a constant floor preserves that while
    keeping the result in the Tweedie domain.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    delta_t = np.asarray(delta_t, dtype=np.float64)
    if kappa.shape != delta_t.shape:
        raise DimensionError(f"shape mismatch {kappa.shape} vs {delta_t.shape}")
    shift = (kappa * delta_t) @ np.asarray(signs, dtype=np.float64)
    return np.maximum(np.asarray(y_base, dtype=np.float64).ravel() + shift, y_floor)


def forward(model: MtdmlModel, x: np.ndarray, t: np.ndarray) -> ForwardOutput:
    """Full pipeline on a batch of (covariates, observed treatments)."""
    t = as_matrix(t, "t")
    rep_i, rep_c, rep_a = disentangle(model, x)
    if t.shape != (rep_i.shape[0], model.config.n_treatments):
        raise DimensionError(f"t has shape {t.shape}, expected "
                             f"({rep_i.shape[0]}, {model.config.n_treatments})")
    t_hat = predict_treatment(model, rep_i, rep_c)
    y_base = predict_outcome(model, rep_c, rep_a)
    kappa = predict_sensitivity(model, rep_i, rep_c, rep_a)
    delta_t = t - t_hat
    y_final = monotonic_head(kappa, delta_t, model.signs, y_base, model.y_floor)
    return ForwardOutput(rep_i, rep_c, rep_a, t_hat, y_base, kappa, delta_t, y_final)


def uplift(model: MtdmlModel, x, t_from, t_to) -> np.ndarray:
    """Predicted outcome change for moving every sample from t_from to t_to.

    Exactly linear in (t_to - t_from) and independent of the observed
    treatment: sum_k signs_k * kappa_k(x) * (t_to - t_from)_k.
    """
    t_from = np.asarray(t_from, dtype=np.float64).ravel()
    t_to = np.asarray(t_to, dtype=np.float64).ravel()
    k = model.config.n_treatments
    if t_from.shape != (k,) or t_to.shape != (k,):
        raise DimensionError(f"contrast vectors must have length {k}")
    rep_i, rep_c, rep_a = disentangle(model, x)
    kappa = predict_sensitivity(model, rep_i, rep_c, rep_a)
    return kappa @ (model.signs * (t_to - t_from))


def _mean_first_layer_columns(net: Mlp) -> np.ndarray:
    # Column-wise mean of the first weight matrix: one direction in the
    # shared-representation space per factor head.
    return net.weights[0].mean(axis=1)


def orthogonality_penalty(model: MtdmlModel) -> float:
    """Pairwise cosine penalty between the factor heads' mean directions."""
    if not model.config.use_ica:
        return 0.0
    return losses.rlo_penalty(
        _mean_first_layer_columns(model.head_instr),
        _mean_first_layer_columns(model.head_conf),
        _mean_first_layer_columns(model.head_adj),
    )


def _outcome_loss(y, y_hat, w: losses.LossWeights, use_tweedie: bool):
    if use_tweedie:
        return losses.tweedie_nll(y, y_hat, w.rho)
    return losses.squared_loss(y, y_hat)


def model_loss_and_grads(
    model: MtdmlModel,
    x: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    w: losses.LossWeights,
    stage: str = "joint",
) -> tuple[float, dict[str, float]]:
    """Compute the stage loss and backpropagate into the stage's nets.

    propensity: treatment + outcome + lambda_ortho * orthogonality, into
    the bottom, factor heads, f_t and f_y. causal: final + lambda_sens *
    sensitivity penalty, into f_k only (everything upstream frozen).
    joint: all five terms, into everything. Gradient buffers are zeroed
    first, so one call yields exactly this batch's gradients.
    """
    if stage not in STAGES:
        raise DomainError(f"unknown stage {stage!r}")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise DimensionError("batch is empty")
    if np.any(y < 0):
        raise DomainError("outcomes must be non-negative")
    model.zero_grad()
    use_tweedie = model.config.use_tweedie

    t = as_matrix(t, "t")
    rep_i, rep_c, rep_a, cache_bottom, cache_i, cache_c, cache_a = (
        _disentangle_cached(model, x)
    )
    n = rep_i.shape[0]
    k = model.config.n_treatments

    omega = np.hstack([rep_i, rep_c])
    t_hat, cache_t = mlp_forward(model.f_t, omega)
    phi = np.hstack([rep_c, rep_a])
    raw_y, cache_y = mlp_forward(model.f_y, phi)
    y_base = _exp_link(model, raw_y.ravel())
    upsilon = np.hstack([rep_i, rep_c, rep_a])
    kappa, cache_k = mlp_forward(model.f_k, upsilon)
    delta_t = t - t_hat
    shift = (kappa * delta_t) @ model.signs
    y_pre = y_base + shift
    y_final = np.maximum(y_pre, model.y_floor)

    components: dict[str, float] = {}
    train_propensity = stage in ("propensity", "joint")
    train_causal = stage in ("causal", "joint")

    d_rep_i = np.zeros_like(rep_i)
    d_rep_c = np.zeros_like(rep_c)
    d_rep_a = np.zeros_like(rep_a)
    d_t_hat = np.zeros_like(t_hat)
    d_y_base = np.zeros(n)

    if train_propensity:
        l_treat = losses.treatment_loss(t, t_hat)
        d_t_hat += losses.treatment_loss_grad(t, t_hat)
        l_out, g_out = _outcome_loss(y, y_base, w, use_tweedie)
        d_y_base += g_out
        l_rlo = orthogonality_penalty(model)
        components["treatment"] = l_treat
        components["outcome"] = l_out
        if model.config.use_ica:
            components["orthogonality"] = l_rlo
    else:
        l_treat = l_out = l_rlo = 0.0

    if train_causal:
        l_final, g_final = _outcome_loss(y, y_final, w, use_tweedie)
        l_kreg = losses.k_reg(kappa)
        components["final"] = l_final
        components["sensitivity_reg"] = l_kreg

        d_y_pre = g_final * (y_pre > model.y_floor)
        d_kappa = d_y_pre[:, None] * (model.signs[None, :] * delta_t)
        d_kappa += w.lambda_sens * losses.k_reg_grad(kappa)
        d_upsilon = mlp_backward(model.f_k, cache_k, d_kappa)
        if stage == "joint":
            # In joint mode the final loss also reaches y_base and t_hat.
            d_y_base += d_y_pre
            d_delta_t = d_y_pre[:, None] * (model.signs[None, :] * kappa)
            d_t_hat += -d_delta_t
            r = model.config.rep_dim
            d_rep_i += d_upsilon[:, :r]
            d_rep_c += d_upsilon[:, r : 2 * r]
            d_rep_a += d_upsilon[:, 2 * r :]
    else:
        l_final = l_kreg = 0.0

    loss = losses.total_loss(l_treat, l_out, l_final, l_rlo, l_kreg, w)

    if train_propensity:
        r = model.config.rep_dim
        d_omega = mlp_backward(model.f_t, cache_t, d_t_hat)
        d_rep_i += d_omega[:, :r]
        d_rep_c += d_omega[:, r:]
        d_raw = d_y_base * y_base * (np.abs(raw_y.ravel()) < EXP_CLAMP)
        d_phi = mlp_backward(model.f_y, cache_y, d_raw[:, None])
        d_rep_c += d_phi[:, :r]
        d_rep_a += d_phi[:, r:]
        if model.config.use_ica:
            d_shared = mlp_backward(model.head_instr, cache_i, d_rep_i)
            d_shared = d_shared + mlp_backward(model.head_conf, cache_c, d_rep_c)
            d_shared = d_shared + mlp_backward(model.head_adj, cache_a, d_rep_a)
            if w.lambda_ortho > 0.0:
                g_i, g_c, g_a = losses.rlo_penalty_grads(
                    _mean_first_layer_columns(model.head_instr),
                    _mean_first_layer_columns(model.head_conf),
                    _mean_first_layer_columns(model.head_adj),
                )
                d_rep = model.config.rep_dim
                model.head_instr.grad_weights[0] += (
                    w.lambda_ortho / d_rep
                ) * g_i[:, None]
                model.head_conf.grad_weights[0] += (
                    w.lambda_ortho / d_rep
                ) * g_c[:, None]
                model.head_adj.grad_weights[0] += (
                    w.lambda_ortho / d_rep
                ) * g_a[:, None]
        else:
            d_shared = mlp_backward(
                model.head_instr, cache_i, d_rep_i + d_rep_c + d_rep_a
            )
        mlp_backward(model.bottom, cache_bottom, d_shared)

    if not np.isfinite(loss):
        raise NumericError(f"stage {stage!r} loss is non-finite: {components}")
    return loss, components


def model_to_doc(model: MtdmlModel, scaler_doc: dict | None = None) -> dict:
    """JSON-serializable document with every weight, row-major."""
    cfg = model.config
    nets = {}
    for name, net in model.named_nets():
        nets[name] = {
            "layer_widths": list(net.spec.layer_widths),
            "activations": list(net.spec.activations),
            "weights": [wm.ravel().tolist() for wm in net.weights],
            "biases": [b.tolist() for b in net.biases],
        }
    return {
        "version": MODEL_FORMAT,
        "n_covariates": cfg.n_covariates,
        "n_treatments": cfg.n_treatments,
        "hidden_width": cfg.hidden_width,
        "rep_dim": cfg.rep_dim,
        "hidden_activation": cfg.hidden_activation,
        "sensitivity_hidden": cfg.sensitivity_hidden,
        "use_ica": cfg.use_ica,
        "use_tweedie": cfg.use_tweedie,
        "signs": model.signs.tolist(),
        "y_floor": model.y_floor,
        "nets": nets,
        "scaler": scaler_doc,
    }


def model_from_doc(doc: dict) -> MtdmlModel:
    if doc.get("version") != MODEL_FORMAT:
        raise DomainError(f"unsupported model document version {doc.get('version')!r}")
    raw_sh = doc.get("sensitivity_hidden")
    cfg = ModelConfig(
        n_covariates=int(doc["n_covariates"]),
        n_treatments=int(doc["n_treatments"]),
        hidden_width=int(doc["hidden_width"]),
        rep_dim=int(doc["rep_dim"]),
        hidden_activation=doc["hidden_activation"],
        sensitivity_hidden=None if raw_sh is None else int(raw_sh),
        use_ica=bool(doc["use_ica"]),
        use_tweedie=bool(doc["use_tweedie"]),
        signs=tuple(int(s) for s in doc["signs"]),
        y_floor=float(doc["y_floor"]),
    )
    model = MtdmlModel(cfg, np.random.default_rng(0))
    for name, net in model.named_nets():
        stored = doc["nets"][name]
        if stored["layer_widths"] != list(net.spec.layer_widths):
            raise DomainError(f"stored net {name!r} has unexpected shape")
        for i, (flat, bias) in enumerate(zip(stored["weights"], stored["biases"])):
            net.weights[i][:] = np.asarray(flat, dtype=np.float64).reshape(
                net.weights[i].shape
            )
            net.biases[i][:] = np.asarray(bias, dtype=np.float64)
    return model


def save_model(model: MtdmlModel, path: str, scaler_doc: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_doc(model, scaler_doc), fh)


def load_model(path: str) -> MtdmlModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_doc(json.load(fh))
