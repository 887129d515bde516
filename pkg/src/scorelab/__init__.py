"""scorelab: a laboratory for comparing credit scorecard modeling techniques.

The package generates synthetic consumer-finance loan portfolios with a
macro-modulated Markov migration process, builds scorecards through
entropy binning and several variable codings (raw, logit-transformed,
dummy and nested indicators), searches variable subsets by branch and
bound, adjusts insignificant attributes, and ranks every fitted model by
weighted distance to an ideal reference point.
"""

__version__ = "0.1.0"
