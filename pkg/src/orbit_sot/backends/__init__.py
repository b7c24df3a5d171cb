"""Segmenter and point-tracker backends: in-process oracle and external bridge."""
