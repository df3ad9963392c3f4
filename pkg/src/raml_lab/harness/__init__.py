"""Command-line harness: verification suites, edit histograms, payoff tables, training sweeps."""
