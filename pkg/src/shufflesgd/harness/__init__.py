"""Configuration, experiment runs and sweeps, output files, the
verification battery and the command line."""
