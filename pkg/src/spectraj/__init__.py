"""Hierarchical trajectory prediction on Fourier spectrums.

Stage one estimates a few future keypoints per behavior style from the
observed trajectory's spectrum; stage two interpolates a full-resolution
spectrum from those keypoints and inverts it back to coordinates.
"""

from .data import AgentTrack, DatasetSplit, TrajectorySample, make_split, parse_ethucy, parse_sdd, resample_track, window_samples
from .evaluation import MetricReport, ade, best_of_k, evaluate, fde, generate_predictions
from .losses import LossWeights, akl_loss, apl_loss, kl_loss, total_loss
from .model import ModelConfig, SpectralPredictor
from .spectral import KeypointSchedule, dft, idft, spectrum_to_trajectory, trajectory_to_spectrum
from .training import TrainConfig, build_model, train

__version__ = "0.1.0"
