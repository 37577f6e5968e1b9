"""VAE-GAN based personalised data augmentation for disordered speech."""

__version__ = "0.1.0"
