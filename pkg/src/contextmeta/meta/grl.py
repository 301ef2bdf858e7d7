"""Gradient reversal: identity forward, negated gradient backward."""

import numpy as np


def grl_forward(x):
    return x


def grl_backward(upstream_grad):
    """Negate the incoming gradient with reversal coefficient exactly 1."""
    return -np.asarray(upstream_grad)
