"""
Deliberate bugs that can be switched on to check the checkers.

Each mutation removes exactly one safety mechanism from one algorithm. A run
with a mutation enabled is expected to produce a counterexample.
"""

from enum import Enum


class Mutation(str, Enum):
    RAFT_NO_COMMIT_TERM_GUARD = "raft-no-commit-term-guard"
    RAFT_NO_UP_TO_DATE_CHECK = "raft-no-up-to-date-check"
    RAFT_NO_VOTED_FOR = "raft-no-voted-for"
    PAXOS_NO_TERM_REWRITE = "paxos-no-term-rewrite"
    PAXOS_PICK_FIRST_NOT_GREATEST = "paxos-pick-first-not-greatest"

    @property
    def algorithm(self) -> str:
        return self.value.split("-", 1)[0]
