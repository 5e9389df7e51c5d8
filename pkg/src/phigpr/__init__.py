"""Physics-informed Gaussian process regression for power-grid state forecasting.

Priors come from Monte Carlo simulation of stochastic swing equations driven
by Ornstein-Uhlenbeck wind fluctuations; data-driven GPR and ARIMA serve as
baselines.
"""

__version__ = "0.1.0"
