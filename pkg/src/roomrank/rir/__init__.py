"""Room impulse responses: image-source simulation and the synthetic corpus."""
