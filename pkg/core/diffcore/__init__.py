from .tape import (
    Scalar, Tape, Variable,
    absolute, add, backward, cos, div, dot, evaluate, exp, forward, is_variable, lincomb, log,
    maximum, minimum, mul, neg, power, sin, sqrt, square, sub, total, value_of, values,
)
from .gradcheck import grad_check, numeric_gradient
