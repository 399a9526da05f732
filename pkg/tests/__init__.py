"""
Test suite for curvcone.

One module per source module; end-to-end runs live in test_bending.py,
test_conformal.py and test_cli.py.
"""
