"""Conveyor VLA - foresight-augmented vision-language-action policy on a conveyor belt."""

__version__ = "0.1.0"
