"""Broadcasting-on-trees lab.

Exact inference on tree-structured broadcast processes, the conditional
expectation operator calculus built on top of it, lemma-level property
checks, and reproducible experiment sweeps.
"""

__version__ = "0.1.0"
