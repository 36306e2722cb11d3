"""mcforge: multiple-choice comprehension datasets from (title, article) corpora.

The pipeline mines decoy titles with a paragraph-vector model plus surface
similarity, assembles 5-way instances, evaluates baselines and small neural
readers on them, and serves an annotation UI for human evaluation.
"""

__version__ = "0.1.0"
