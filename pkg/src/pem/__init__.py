"""Player experience modelling toolkit.

Builds an affect predictor from gameplay video with commentary-voice
amplitude as the training label, and evaluates its output against
physiological (EDA/PPG) and survey data.
"""

__version__ = "0.1.0"
