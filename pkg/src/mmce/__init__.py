"""Multimodal claim extraction (MICE) and a three-part LLM-as-judge evaluation harness."""

__version__ = "0.1.0"
