"""Multi-omics survival and cancer-type prediction around a self-normalizing
feedforward encoder: preprocessing/feature union, training with a combined
Cox / cross-entropy / L1 objective, and survival evaluation (concordance,
Kaplan-Meier, log-rank, risk stratification)."""

__version__ = "0.1.0"
