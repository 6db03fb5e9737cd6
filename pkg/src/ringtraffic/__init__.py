"""Statistical-mechanics cellular-automaton traffic model with a CNN-LSTM forecaster."""

__version__ = "0.1.0"
DATASET_FORMAT = "TRMC0001"
CHECKPOINT_FORMAT = "TRNN0001"
