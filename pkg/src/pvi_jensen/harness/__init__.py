"""Data, experiment drivers, bandits, verification suites and the CLI."""
