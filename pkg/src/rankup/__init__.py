"""Semi-supervised regression with an auxiliary ranking classifier and regression distribution alignment."""

__version__ = "0.1.0"
