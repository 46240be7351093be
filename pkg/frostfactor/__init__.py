"""
Item cold-start rating prediction from business descriptions with SVD++ latent
factors and a convolutional text regressor.
"""

__version__ = "0.1.0"
