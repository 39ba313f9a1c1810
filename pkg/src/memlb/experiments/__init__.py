"""Configuration, sweeps, verification suites and the command line."""
