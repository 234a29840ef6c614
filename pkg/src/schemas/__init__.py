# This file makes schemas a Python package
