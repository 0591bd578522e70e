"""
curvesurvey - robust estimation of totals of curves under survey sampling
Horvitz-Thompson and conditional-bias robust estimators, MSE estimation and Monte Carlo evaluation.
"""

__version__ = "1.0.0"
__author__ = "curvesurvey developers"
__description__ = "Design-based robust estimation of curve totals"
