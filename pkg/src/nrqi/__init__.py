"""No-reference quality index for MR frame sequences.

Pipeline: preprocessing -> MSCN coefficients -> directional neighbour
products -> AGGD fits (12 features per frame) -> cluster-derived signed
weights -> MAD-weighted directional fusion.
"""

__version__ = "0.1.0"
