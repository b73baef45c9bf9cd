"""Benchmarks: the artificial universal-task workload and the 1D stencil."""
