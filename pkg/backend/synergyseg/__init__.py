"""synergyseg - auto-configured synergistic latent space networks for 3D liver segmentation."""

__version__ = "0.1.0"
