"""Spelling precision, occlusion-aware crops and judge-based layer success rate."""
