"""Multimodal HS6 code classifier.

Pipeline pieces, bottom to top: dense fp64 numeric core (`tensor`), modality
projection and early fusion with analytic backward passes (`fusion`), the
assembled network with checkpointing (`model`), Adam training with early
stopping (`optim`), dataset ingestion and splitting (`data`), text cleanup /
segmentation / spell correction (`textprep`), embedding providers
(`encoding`), top-k and hierarchical metrics (`evaluation`), and the CLI and
HTTP service (`cli`, `serve`).
"""

__version__ = "0.1.0"
