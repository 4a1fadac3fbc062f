"""Cascaded X-ray triage: staged classifiers with a self-contained
training/inference stack, explanations, metrics, and a serving API."""

__version__ = "0.1.0"
