"""Diode-effect constriction SQUID resonators."""
