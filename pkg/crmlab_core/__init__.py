#!/usr/bin/env python3

"""crmlab Core Package.

This package contains the simulation, certificate and reporting modules for
the crmlab closed-loop reference model adaptive control laboratory.
"""

__version__ = "0.1.0"
