"""Estimation: Grassmann optimizer, groupwise envelope fit, ICC loop, BIC selection, baselines."""
