from src.decoder.dual_decoder import (
    DecoderOutput,
    DualDecoder,
    assemble_feature_sequence,
    assemble_image_sequence,
    decode_image,
    predict_features,
)
from src.decoder.mask_grid import MaskTokenGrid
from src.decoder.pixel_head import PixelHead


__all__ = [
    "DecoderOutput",
    "DualDecoder",
    "MaskTokenGrid",
    "PixelHead",
    "assemble_feature_sequence",
    "assemble_image_sequence",
    "decode_image",
    "predict_features",
]
