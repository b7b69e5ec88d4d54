"""
Active target discovery: choose which cells of a hidden grid to reveal, under a budget, using a
diffusion particle belief and a budget-scheduled exploration-exploitation score.
"""
__version__ = "0.1.0"
