# tdnas/__init__.py
"""Differentiable architecture search over factored time-delay networks."""
