"""Numerical tolerances shared by every module."""

# Validation of state / channel invariants.
VALIDATION_ATOL = 1e-10
# Eigenvalues of a density matrix may dip this far below zero.
PSD_ATOL = 1e-9
# Representation-equivalence checks (pure vs mixed, Kraus vs dilation).
EQUIV_ATOL = 1e-12
# Initial fidelity above 1 - DEGENERATE_GAP means "already at the target".
DEGENERATE_GAP = 1e-12
