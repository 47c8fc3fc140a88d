"""Desk-scale in-hand reorientation: surrogate environment, PPO teacher
training, teacher-student distillation, and point-cloud evaluation tools.
"""

__version__ = "0.1.0"
