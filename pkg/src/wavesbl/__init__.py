"""Parameter inference for wave equations with Markov-switching coefficients."""
__version__ = "0.1.0"
