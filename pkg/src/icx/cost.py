"""Forward-pass cost model and the shared evaluation ledger.

Every predictor call is priced in "token connections": the context rows
interact pairwise with each other, and each query row interacts with every
context row. The ledger charges this model regardless of how a particular
backend actually computes, so budgets of different explanation strategies
stay comparable.
"""

from __future__ import annotations

import math
import threading


def token_cost(n_train: int, n_inf: int) -> int:
    """Token connections consumed by one forward pass, exactly.

    ``C(n_train, 2)`` pairwise connections inside the context plus
    ``n_train * n_inf`` connections from query rows attending to the context.
    """
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    if n_inf < 0:
        raise ValueError("n_inf must be >= 0")
    return math.comb(n_train, 2) + n_train * n_inf


class CostLedger:
    """Accumulates token connections and call counts across predictor calls.

    Accumulation is atomic; predictor calls running on concurrent threads may
    charge the same ledger. Counts never decrease.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._token_connections = 0
        self._evaluation_calls = 0

    @property
    def token_connections(self) -> int:
        with self._lock:
            return self._token_connections

    @property
    def evaluation_calls(self) -> int:
        with self._lock:
            return self._evaluation_calls

    def charge(self, n_train: int, n_inf: int) -> int:
        """Record one call of the given shape; returns the tokens charged."""
        cost = token_cost(n_train, n_inf)
        with self._lock:
            self._token_connections += cost
            self._evaluation_calls += 1
        return cost

    def snapshot(self) -> tuple[int, int]:
        """Atomic (token_connections, evaluation_calls) pair."""
        with self._lock:
            return self._token_connections, self._evaluation_calls

    def __repr__(self) -> str:
        tokens, calls = self.snapshot()
        return f"CostLedger(token_connections={tokens}, evaluation_calls={calls})"
