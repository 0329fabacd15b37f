"""nenc: layer-weighted voxel encoding with connectivity refinement.

Subpackages by responsibility:

- ``featurestore``: on-disk feature/response formats and sparse random projection
- ``encoder``: layer-weighted regularized regression (fit, tune, oracle)
- ``connectivity``: inter/intra-region refinement, baselines, attribution
- ``metrics``: Pearson scoring, aggregation, Welch's t-test, linear CKA
- ``harness``: folds, real/simulated runs, comparisons, parallel execution
- ``report``: deterministic CSV/JSON/SVG emission
"""

__version__ = "0.1.0"
