"""Layout-conditioned latent diffusion for dense multi-layer business graphics, at desk scale."""

__version__ = "0.1.0"
