"""Genetic-distance-mediated species recognition toolkit.

Sequence handling, substitution-model distances and neighbor joining feed a
genetic-distance representation space; a small numpy autodiff core trains
multi-view recognizers that regress into that space and a sequence decoder
that maps embeddings back to DNA.
"""

__version__ = "0.1.0"
