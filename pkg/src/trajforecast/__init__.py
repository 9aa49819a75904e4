"""Multi-agent trajectory forecasting on sports tracking data.

Subpackages: ``data`` (ingest, resampling, windows, splits, synthetic
scenes), ``models`` (eight forecasters with a scikit-learn interface),
``experiments`` (configs, checkpoints, the three benchmark protocols).
Modules: ``autograd`` (tape-based reverse-mode differentiation),
``optim``, ``training``, ``metrics`` and ``gradcheck``.
"""
__version__ = "0.1.0"
