"""Channel prediction with transfer- and meta-learned linear filters.

Subpackage map:

* :mod:`chanpred.simulator` - frame-based fading channel generator.
* :mod:`chanpred.datasets` - windowed regression datasets and NMSE.
* :mod:`chanpred.ridge` - biased ridge regression, transfer and
  closed-form meta-learned biases (full-matrix "naive" predictors).
* :mod:`chanpred.lstd` - reduced-rank long/short-term predictors
  trained by sequential alternating least squares.
* :mod:`chanpred.meta` - equilibrium-propagation meta-learning of the
  reduced-rank bias pairs.
* :mod:`chanpred.rank` - feature-count estimation (AIC and
  meta-validation sweep).
* :mod:`chanpred.bench` - seeded NMSE benchmark harness.
* :mod:`chanpred.service` - FastAPI wrapper around the above.
* :mod:`chanpred.cli` - command-line client for the service.
"""

__version__ = "0.1.0"
