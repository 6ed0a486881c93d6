"""Mixed-binary bilevel hyperparameter optimization by relax-and-penalize.

Binary hyperparameters (here: the assignment of regression features to
groups) are relaxed to the product of simplices, a concave binarity
penalty ``sum_i theta_i * (1 - theta_i)`` is added to the validation
objective with weight ``1/eps``, and a continuation loop shrinks ``eps``
geometrically until the iterate is binary. The lower level is a
multi-task group-lasso training problem solved by a fixed number of
smooth dual-ascent iterations, differentiated exactly in reverse mode.
"""

__version__ = "0.1.0"
