# Check that total_seconds is a float
assert isinstance(result, float)
# End program
