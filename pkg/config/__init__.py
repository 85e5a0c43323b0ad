"""
strokebench - Django configuration package.

Settings drive the batch pipeline; there is no web surface.
"""
