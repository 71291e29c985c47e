"""
Consensus state machines: shared types, the AppendEntries pipeline, and the
Paxos and Raft algorithms.
"""
