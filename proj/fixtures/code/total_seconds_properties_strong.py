from datetime import timedelta

# Check that total_seconds is a float
assert isinstance(result, float)

# Property: total_seconds equals division by one second
assert result == input_args / timedelta(seconds=1)
# End program
