"""One-step-ahead log-return forecasting with boosted trees and walk-forward evaluation."""

__version__ = "0.1.0"
