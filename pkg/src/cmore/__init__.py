"""Pseudo question-answer-context corpus construction from Wikipedia citations.

The package covers the whole data pipeline (statement/citation mining, reference
fetching, cloze question generation, context chunking) together with the BM25
and vector-scoring retrieval baselines and the retrieval/EM evaluation harness.
"""

__version__ = "0.1.0"
