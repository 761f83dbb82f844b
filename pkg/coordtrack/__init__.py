"""Coordtrack
===================
Object tracking by generating box coordinates as a token sequence, with
a numpy autodiff kernel, synthetic thermal-like data and OTB-style metrics.
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.

__version__ = "0.1.0"
