"""fidsim: deterministic simulator for federated, open-set network intrusion
detection coordinated over an accuracy-scored consortium blockchain.

Subsystems:

- :mod:`fidsim.flows` / :mod:`fidsim.datasets` — packet-to-flow feature
  extraction, CSV ingestion, normalization, synthetic traffic, and the
  held-out-attack (0-day) scenario splits.
- :mod:`fidsim.nn` — flat-vector dense networks with manual backprop.
- :mod:`fidsim.detector` — benign-only auto-encoder with a median/MAD
  threshold on reconstruction error.
- :mod:`fidsim.classifier` — open-set attack classifier with one Gaussian
  descriptor per known class and 0-day rejection.
- :mod:`fidsim.fed` — clipping, Gaussian-mechanism noise, loss-gap update
  validation, sample-weighted averaging.
- :mod:`fidsim.chain` — identities, transactions, the message bus,
  accuracy-scored BFT consensus, and the end-to-end training simulation.
- :mod:`fidsim.metrics` / :mod:`fidsim.harness` / :mod:`fidsim.cli` —
  evaluation metrics, experiment drivers, and the command line.
"""

from . import chain, classifier, config, datasets, detector, fed, flows, harness, metrics, nn
from .errors import (
    ConfigError,
    CorruptInputError,
    DimensionError,
    FidsimError,
    LabelError,
    NonFiniteGradientError,
    NotReadyError,
    RowError,
    TopologyError,
)

__version__ = "0.1.0"
