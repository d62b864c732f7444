"""Encoder-decoder captioning: vocabulary, data, model, decoding and training."""
