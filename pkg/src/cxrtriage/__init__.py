"""Chest X-ray normalcy triage toolkit.

Three engines behind one package: a rule-based report labeler that turns
free-text radiology reports into normal/abnormal study labels, a from-scratch
dual-backbone feature-pyramid classifier with reverse-mode gradients, and an
evaluation kit built around the zero-false-negative triage operating point.
"""

__version__ = "0.1.0"
