"""
Safety oracles over traces and a bounded state-space explorer.
"""
