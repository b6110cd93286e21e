"""Zero-reachability analysis for probabilistic multi-counter automata."""

__version__ = "0.1.0"
