"""Export pretrained CNNs as feature extractors with model manifests."""

__version__ = "0.1.0"
