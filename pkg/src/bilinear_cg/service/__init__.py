"""HTTP service wrapping the solver."""
