"""
Adapters between the numeric core and files on disk.
"""
