"""Frequency-domain masked image modeling for segmentation pretraining."""

from .config import TrainConfig, preset
from .data import PhantomDataset, gen_dataset, gen_phantom
from .decoder import BilateralAggregationDecoder, FrequencyMappingBlock, PretrainNet
from .loss import LossConfig, focal_frequency_loss, overall_loss
from .model import Encoder, EncoderSpec, SegmentationNet
from .pipeline import finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "BilateralAggregationDecoder", "Encoder", "EncoderSpec", "FrequencyMappingBlock",
    "LossConfig", "PhantomDataset", "PretrainNet", "SegmentationNet", "TrainConfig",
    "finetune", "focal_frequency_loss", "gen_dataset", "gen_phantom", "overall_loss",
    "preset", "pretrain",
]
