"""Batch-norm based weakly supervised video anomaly detection on snippet features."""

from .stats import BatchStats, DfmMetric, RunningStats, batch_stats, dfm, dfm_batch, ema_update
from .selection import SelectionMask, SelectionRatios, select_bls, select_normal_matched, select_sbs, select_sls
from .losses import LossWeights, MppConfig, abnormal_loss, mpp_loss, normal_loss, total_loss
from .model import ModelConfig, ModelParams, anomaly_score, backward, forward, init_params
from .optim import AdamState, adam_step
from .data import Dataset, SynthConfig, VideoRecord, generate_synthetic, interpolate, load_dataset, save_dataset
from .metrics import MetricReport, average_precision, roc_auc
from .trainer import TrainConfig, evaluate, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BatchStats", "Dataset", "DfmMetric", "LossWeights", "MetricReport", "ModelConfig",
    "ModelParams", "MppConfig", "RunningStats", "SelectionMask", "SelectionRatios", "SynthConfig",
    "TrainConfig", "VideoRecord", "abnormal_loss", "adam_step", "anomaly_score", "average_precision",
    "backward", "batch_stats", "dfm", "dfm_batch", "ema_update", "evaluate", "fit", "forward",
    "generate_synthetic", "init_params", "interpolate", "load_dataset", "mpp_loss", "normal_loss",
    "roc_auc", "save_dataset", "select_bls", "select_normal_matched", "select_sbs", "select_sls",
    "total_loss", "train_step",
]
