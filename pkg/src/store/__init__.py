# This file makes store a Python package
