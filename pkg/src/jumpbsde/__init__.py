"""Decomposition schemes for forward-backward SDEs with a single jump time.

The jump equation is split into a pre-jump branch and a family of post-jump
branches indexed by the jump time. Each branch is a Brownian equation solved
by an Euler forward scheme and an implicit backward scheme, and the branches
are recombined along each path.
"""

__version__ = "0.1.0"
