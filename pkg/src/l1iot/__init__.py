"""l1-regularized inverse entropic optimal transport."""
