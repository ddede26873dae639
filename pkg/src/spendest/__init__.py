"""Estimation of unreported tutoring expenditures from district finance data.

The pipeline: load and clean tabular records, train a second-order
gradient-boosted tree regressor tuned with a Parzen-estimator sampler,
then impute dollar amounts (with residual-based intervals) for districts
that mention the activity without reporting a figure.
"""

__version__ = "0.1.0"

# Version of every JSON artifact layout (model, study, encoding, results).
SCHEMA_VERSION = 1
