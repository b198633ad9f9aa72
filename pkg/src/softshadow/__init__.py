"""Neural soft shadow textures and parametric light labels from HDR panoramas."""

__version__ = "0.1.0"
