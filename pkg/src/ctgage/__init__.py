"""Gestational-age regression from fetal heart-rate traces."""

__version__ = "0.1.0"
