from src.pipeline.checkpoint import Checkpoint, checkpoint_hash, load_checkpoint, save_checkpoint
from src.pipeline.data import ImageDataset, ingest_dataset, split_dataset
from src.pipeline.synthetic import make_smoke_dataset, make_smoke_images
from src.pipeline.trainers import ARTrainer, FlowTrainer, TokenizerTrainer, TrainResult


__all__ = [
    "ARTrainer",
    "Checkpoint",
    "FlowTrainer",
    "ImageDataset",
    "TokenizerTrainer",
    "TrainResult",
    "checkpoint_hash",
    "ingest_dataset",
    "load_checkpoint",
    "make_smoke_dataset",
    "make_smoke_images",
    "save_checkpoint",
    "split_dataset",
]
