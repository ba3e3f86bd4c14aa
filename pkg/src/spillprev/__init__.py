"""Estimate how many units a randomized treatment affected through others.

Given a randomized experiment with binary outcomes, an analyst-supplied
proxy network, and no assumptions on interference, this package produces a
conservative point estimate and a one-sided confidence lower bound for the
number of units whose outcome was changed by the treatment of other units.
"""

__version__ = "0.1.0"
