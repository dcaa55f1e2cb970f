from src.generators.ar.model import ARTransformer
from src.generators.ar.rope import Rope2D, grid_positions, rope2d_rotate, sequence_positions
from src.generators.ar.sample import ar_sample, guided_logits, pick_tokens
from src.generators.ar.train import ar_loss, ar_train_step, drop_classes


__all__ = [
    "ARTransformer",
    "Rope2D",
    "ar_loss",
    "ar_sample",
    "ar_train_step",
    "drop_classes",
    "grid_positions",
    "guided_logits",
    "pick_tokens",
    "rope2d_rotate",
    "sequence_positions",
]
