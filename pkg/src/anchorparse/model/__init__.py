"""Window-attention encoder, autoregressive decoder, training and checkpoints."""
