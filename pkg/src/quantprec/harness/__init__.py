"""Experiment harness: problems, training loops, checkpoints, memory accounting, CLI."""
