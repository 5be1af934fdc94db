"""Driver re-identification from raw CAN bus logs.

Every (message id, byte offset) position becomes a time series; one
CNN/LSTM/attention classifier is trained per series and the best of them are
frozen and combined by a single trainable decision layer.
"""

__version__ = "0.1.0"
