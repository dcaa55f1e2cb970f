from src.objectives.discriminator import (
    AdversarialLosses,
    FeatureDiscriminator,
    adversarial_losses,
)
from src.objectives.losses import (
    BREAKDOWN_COLUMNS,
    LossParts,
    feature_sim_loss,
    pixel_l2,
    total_tokenizer_loss,
)
from src.objectives.perceptual import perceptual_proxy


__all__ = [
    "BREAKDOWN_COLUMNS",
    "AdversarialLosses",
    "FeatureDiscriminator",
    "LossParts",
    "adversarial_losses",
    "feature_sim_loss",
    "perceptual_proxy",
    "pixel_l2",
    "total_tokenizer_loss",
]
