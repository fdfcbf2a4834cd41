"""Join-order optimization workbench.

Contraction-based query-graph planning with classical enumerators, a
learned cost-to-go model, and an experiment harness for comparing them
under several cost models.
"""

__version__ = "0.1.0"
