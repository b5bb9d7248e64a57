"""
Policy cache and report export modules
"""
