"""Debiased uplift estimation for multi-dimensional continuous treatments.

Public surface: synthetic data generation with known ground truth, the
cross-fitted monotone-head estimator, reference baselines, evaluation
metrics, and a CLI (``mtdml``) tying them together.
"""

from .data import DgpConfig, Dataset, Truth, generate_synthetic, load_csv, save_csv, true_contrast, true_mean
from .losses import LossWeights, cosine, k_reg, rlo_penalty, squared_loss, total_loss, treatment_loss, tweedie_nll
from .model import ForwardOutput, ModelConfig, MtdmlModel, disentangle, forward, load_model, model_from_doc, model_to_doc, monotonic_head, predict_outcome, predict_sensitivity, predict_treatment, save_model, uplift
from .nn import AdamState, Mlp, MlpSpec, adam_step, finite_diff_grad, mlp_backward, mlp_forward
from .training import CrossFitEnsemble, Scaler, TrainConfig, crossfit_train, ensemble_from_doc, ensemble_predict, ensemble_to_doc, ensemble_uplift, joint_train, load_ensemble, save_ensemble, scaler_apply, scaler_fit, train, train_stage

__version__ = "0.1.0"
