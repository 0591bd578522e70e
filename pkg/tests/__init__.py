"""Test package for curvesurvey."""
