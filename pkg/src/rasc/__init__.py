"""Self-calibration of dense affine-drifted sensor arrays."""
