"""Federated ECG arrhythmia classification pipeline."""
