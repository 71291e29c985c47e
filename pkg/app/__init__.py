"""
paxraft application package.

Raft-style MultiPaxos and Raft as pure state machines, a deterministic
simulator to run them, and checkers for their safety properties.
"""

__version__ = "0.1.0"
