"""Score implicit matching distillation on a desk-scale float64 stack."""

__version__ = "0.1.0"
