"""Ablated message ensembles for multi-agent decisions under adversarial communication."""
