"""Black-box genetic adversarial attacks on a small keyword-spotting model."""

__version__ = "0.1.0"
