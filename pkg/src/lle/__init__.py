"""Raw low-light image enhancement with an attention-gated U-Net GAN."""

__version__ = "0.1.0"
