"""Model types, densities and the error hierarchy."""
