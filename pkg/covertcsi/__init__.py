"""
covertcsi: covert communication over state-dependent channels with transmitter CSI
"""

__version__ = '1.0.0'
