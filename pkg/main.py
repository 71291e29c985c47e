"""
paxraft - Raft-style Paxos and Raft as deterministic state machines.

Entry point for the command line; see app/cli.py for the subcommands.
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
