"""Cascaded multimodal anomaly detection toolkit.

Two-stage pipeline (statistical random-forest detection, thermal attention
localization), fusion baselines, exact tree-ensemble Shapley attribution,
and modality-bias diagnostics, exercised on a synthetic sensor/thermal
benchmark.
"""

__version__ = "0.1.0"
