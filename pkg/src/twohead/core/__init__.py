"""Exceptions, encoders, attacks, losses and the memory bank."""
