"""Downstream generators over tokenizer latents (autoregressive and flow matching)."""
