"""pairsmith: adversarial synthesis of training image pairs for attribute ranking."""

__version__ = "0.1.0"
