"""Graph-convolutional surrogate for static traffic assignment."""
