from src.modules.blocks import (
    Attention,
    Mlp,
    TransformerBlock,
    sinusoidal_embedding,
)


__all__ = ["Attention", "Mlp", "TransformerBlock", "sinusoidal_embedding"]
