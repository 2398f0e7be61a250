"""Toolkit for estimating lifting-equation hand distances from video-derived features.

Subpackages and modules:

- ``kinlab``: trajectory parsing, zero-phase filtering, frame labeling
- ``rnle``: revised lifting-equation multipliers, RWL, and lifting index
- ``simscene``: deterministic synthetic trial generator and ROI renderer
- ``roistore``: detection records, run-length masks, crop geometry
- ``featpipe``: per-frame feature assembly, view fusion, windowing
- ``seqreg``: sequence-to-sequence regressor with hand-written backprop
- ``evalharness``: leave-one-subject-out evaluation over condition cells
- ``report``: aggregate tables and figures
- ``cli``: command-line entry point
"""

__version__ = "0.1.0"
