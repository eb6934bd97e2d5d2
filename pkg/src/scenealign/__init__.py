"""scenealign: contrastive 3D scene-text-image alignment with QA heads."""

__version__ = "0.1.0"
