from src.tokenizer.model import EncodedImages, RegionTokenizer, TokenizerOutput


__all__ = ["EncodedImages", "RegionTokenizer", "TokenizerOutput"]
