"""Non-linear feedback coding over AWGN channels with noisy feedback."""

__version__ = "0.1.0"
