"""
Visualization Module - plotly charts for loss surfaces and training curves
"""

from .charts import create_surface_chart, create_training_chart, write_chart

__all__ = ['create_surface_chart', 'create_training_chart', 'write_chart']
