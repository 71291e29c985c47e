"""
paxraft core package.

Configuration models, structured logging and metrics export.
"""
