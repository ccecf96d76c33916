"""Walk-forward statistical arbitrage on stock returns and search volume."""

__version__ = "0.1.0"
