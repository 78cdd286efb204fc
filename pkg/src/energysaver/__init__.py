"""Energy monitoring pipeline: simulated sensors, pub/sub transport, ingestion,
time-series storage and LSTM load forecasting."""

__version__ = "0.1.0"
