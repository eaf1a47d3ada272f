"""otmkit: optimal-transport distances between finite Markov chains."""

__version__ = "0.1.0"
