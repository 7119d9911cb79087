"""Clustering scores, cross-validated prediction error, bootstrap SDs and scenario generation."""
