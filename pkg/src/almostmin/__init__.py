"""Numerical laboratory for minimizers and almost minimizers of the energy int(|grad u|^2 + 2|u|)."""
