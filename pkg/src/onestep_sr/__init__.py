"""One-step diffusion super-resolution toolkit.

A desk-scale restoration pipeline: a small VAE and text-conditioned U-Net
perform a single forward-noising / recovery step in latent space, with
gradient-adaptive noise, LQ-guided feature modulation, and mask-constrained
attention guidance layered on top via a two-stage LoRA training protocol.
"""

__version__ = "0.1.0"
