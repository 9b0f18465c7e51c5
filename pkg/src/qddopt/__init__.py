"""Optimal doping design for the stationary quantum drift-diffusion model."""
