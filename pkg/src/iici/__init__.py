"""Intra- and inter-camera invariance learning for isolated-camera re-ID, at desk scale."""

from .config import RunConfig, load_config, published_recipe
from .dataset import Dataset, SynthConfig, generate_synthetic, inject_overlap, load_dataset, make_sct_split, save_dataset
from .encoder import EncoderParams, backward, encode, init_params
from .evaluation import RetrievalResult, camera_probe, evaluate, mcnl_order_rate
from .losses import BatchView, LossConfig, mine_batch
from .memory import PrototypeBank, init_from_dataset
from .trainer import TrainConfig, ablation_variant, pk_sample, train, train_step

__version__ = "0.1.0"
