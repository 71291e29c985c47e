"""
Deterministic discrete-event simulation of a cluster.
"""
