"""Security-event ontology normalisation and behavioural anomaly detection."""

__version__ = "0.1.0"
