"""Power-flow-informed neural network surrogates of AC-OPF with MILP
worst-case verification and worst-case-driven dataset enrichment."""

__version__ = "0.1.0"
