"""
Command modules for the lab. Each module exposes setup(subparsers).
"""
