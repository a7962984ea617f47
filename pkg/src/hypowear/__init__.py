"""Non-invasive hypoglycemia detection from wearable GSR and heart-rate signals."""

__version__ = "0.1.0"
