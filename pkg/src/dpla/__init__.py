"""Dual-stage post-hoc logit adjustment for open-world long-tailed SSL.

Class indices are zero-based throughout: known classes occupy ``0..c_k-1``
and novel classes ``c_k..c_t-1``.
"""

__version__ = "0.1.0"
