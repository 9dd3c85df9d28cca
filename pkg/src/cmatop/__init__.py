"""Proximal calculus, generalized Jacobians and KKT diagnostics for composite matrix optimization."""
