"""Exact solvers: simplex LP, MILP branch-and-bound and the IProp layer subproblems."""
